//! A tape-based reverse-mode differentiator.
//!
//! Values are real tensors whose leading axis holds the algebra components,
//! so the quaternion gradient of a weight is simply the four real gradients
//! of `W0..W3` computed by ordinary real-valued backpropagation.

use std::collections::BTreeMap;

use qgan_quat::{Scalar, Tensor};

use crate::algebra::Algebra;
use crate::error::shape_err;
use crate::kernels::{self, BnDims, BnSaved, ConvGeom};
use crate::layers::ConvConfig;
use crate::params::{ParamId, ParamStore};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Scalar nonlinearity applied independently to every component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Average,
    Sum,
}

/// Which spectral norm a [`Op::SpectralScale`] divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnMode {
    /// One norm per component submatrix.
    Split,
    /// One norm of the whole block-structured real matrix.
    Full,
}

/// Recorded operation. Input order is listed per variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Op<T> {
    /// Leaf holding a fixed value.
    Constant,
    /// Leaf holding a parameter value.
    Param(ParamId),
    /// `x [K,B,Ci]`, `w [K,Co,Ci]`, optional `b [K,Co]`.
    Dense {
        alg: Algebra,
    },
    /// `x [K,B,Ci,H,W]`, `w [K,Co,Ci,k,k]`, optional `b [K,Co]`.
    Conv {
        alg: Algebra,
        cfg: ConvConfig,
    },
    /// `x [K,B,Ci,H,W]`, `w [K,Ci,Co,k,k]`, optional `b [K,Co]`.
    ConvTranspose {
        alg: Algebra,
        cfg: ConvConfig,
    },
    Activation(Activation),
    /// `scale * x + shift`.
    Affine {
        scale: f64,
        shift: f64,
    },
    Add,
    /// Elementwise product.
    Mul,
    Abs,
    Square,
    /// Mean of all entries, shape `[1]`.
    Mean,
    /// Sum of all entries, shape `[1]`.
    Sum,
    /// Nearest-neighbour upsampling of `[K,B,C,H,W]`.
    Upsample(usize),
    Pool {
        kind: PoolKind,
        window: usize,
    },
    /// `[K,B,C,H,W]` -> `[K,B,C]`.
    GlobalSumPool,
    /// Amplitude-guided max pooling; quaternion input only.
    GuidedMaxPool {
        window: usize,
    },
    /// Batch-statistics normalization: `x [K,B,C,..]`, `gamma [C]`, `beta [K,C]`.
    BatchNorm {
        eps: f64,
    },
    /// Normalization with fixed statistics (`mean [K,C]`, `var [C]`).
    BatchNormFixed {
        eps: f64,
        mean: Vec<T>,
        var: Vec<T>,
    },
    /// `w / sigma(w)` with `sigma = u^T M(w) v` for fixed singular vector
    /// estimates `u [K*rows]`, `v [K*cols]`.
    SpectralScale {
        mode: SnMode,
        u: Vec<T>,
        v: Vec<T>,
    },
    /// `[1,B,4m,..]` -> `[4,B,m,..]`, splitting channels into four blocks.
    ToQuaternion,
    /// Inverse of [`Op::ToQuaternion`].
    ToReal,
    /// `[K,..]` -> `[1,..]`.
    SumComponents,
    Reshape(Vec<usize>),
    /// Summed binary cross-entropy averaged over the batch axis:
    /// `estimate [K,B,..]`, `target [K,B,..]`, shape `[1]`.
    CrossEntropy {
        eps: f64,
    },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Dense { .. } => "dense",
            Op::Conv { .. } => "conv2d",
            Op::ConvTranspose { .. } => "conv_transpose2d",
            Op::Activation(_) => "activation",
            Op::Affine { .. } => "affine",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Abs => "abs",
            Op::Square => "square",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Upsample(_) => "upsample",
            Op::Pool { .. } => "pool",
            Op::GlobalSumPool => "global_sum_pool",
            Op::GuidedMaxPool { .. } => "guided_max_pool",
            Op::BatchNorm { .. } => "batch_norm",
            Op::BatchNormFixed { .. } => "batch_norm_fixed",
            Op::SpectralScale { .. } => "spectral_scale",
            Op::ToQuaternion => "to_quaternion",
            Op::ToReal => "to_real",
            Op::SumComponents => "sum_components",
            Op::Reshape(_) => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn arity(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            Op::Constant | Op::Param(_) => 0..=0,
            Op::Dense { .. } | Op::Conv { .. } | Op::ConvTranspose { .. } => 2..=3,
            Op::BatchNorm { .. } | Op::BatchNormFixed { .. } => 3..=3,
            Op::Add | Op::Mul | Op::CrossEntropy { .. } => 2..=2,
            _ => 1..=1,
        }
    }
}

#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    Geom(ConvGeom),
    Bn(BnSaved<T>),
    Argmax(Vec<usize>),
    Sigma(Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    saved: Saved<T>,
}

/// Reverse-mode recording of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_nodes: BTreeMap<ParamId, NodeId>,
    min_kink: f64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn t<T: Scalar>(v: f64) -> T {
    T::from_f64(v)
}

fn f<T: Scalar>(v: T) -> f64 {
    Scalar::to_f64(v)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            min_kink: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Smallest distance of any recorded input to a point where the graph is
    /// not differentiable (ReLU/abs at zero, guided-pool ties).
    pub fn min_kink_distance(&self) -> f64 {
        self.min_kink
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, Vec::new(), value, Saved::None)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(Op::Param(id), Vec::new(), store.get(id).clone(), Saved::None);
        self.param_nodes.insert(id, n);
        n
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>, saved: Saved<T>) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            saved,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluate `op` eagerly on `inputs` and append it.
    pub fn record(&mut self, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId> {
        if matches!(op, Op::Constant | Op::Param(_)) {
            return Err(NnError::Config(format!(
                "{} leaves are created with Tape::constant / Tape::param",
                op.name()
            )));
        }
        let arity = op.arity();
        if !arity.contains(&inputs.len()) {
            return Err(NnError::Arity {
                op: op.name(),
                expected: *arity.end(),
                got: inputs.len(),
            });
        }
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(NnError::DanglingNode {
                    id: id.0,
                    len: self.nodes.len(),
                });
            }
        }
        let (value, saved, kink) = self.forward(&op, inputs)?;
        self.min_kink = self.min_kink.min(kink);
        Ok(self.push(op, inputs.to_vec(), value, saved))
    }

    fn forward(&self, op: &Op<T>, ids: &[NodeId]) -> Result<(Tensor<T>, Saved<T>, f64)> {
        let x = self.value(ids[0]);
        let xs = x.shape();
        let name = op.name();
        let none = |v: Tensor<T>| Ok((v, Saved::None, f64::INFINITY));
        match op {
            Op::Constant | Op::Param(_) => unreachable!("leaves are rejected by record"),
            Op::Dense { alg } => {
                let w = self.value(ids[1]);
                let k = check_alg(name, *alg, xs)?;
                let ws = w.shape();
                if xs.len() != 3 || ws.len() != 3 || ws[0] != k || ws[2] != xs[2] {
                    return Err(shape_err(name, format!("input {xs:?} vs weight {ws:?}")));
                }
                let bias = self.bias(ids, k, ws[1], name)?;
                let y = kernels::dense_forward(*alg, xs[1], xs[2], ws[1], x.data(), w.data(), bias);
                none(Tensor::from_vec(&[k, xs[1], ws[1]], y)?)
            }
            Op::Conv { alg, cfg } => {
                let w = self.value(ids[1]);
                let k = check_alg(name, *alg, xs)?;
                let ws = w.shape();
                if xs.len() != 5
                    || ws.len() != 5
                    || ws[0] != k
                    || ws[2] != xs[2]
                    || ws[3] != cfg.kernel
                    || ws[4] != cfg.kernel
                {
                    return Err(shape_err(name, format!("input {xs:?} vs weight {ws:?} ({cfg:?})")));
                }
                let g = ConvGeom::conv(xs[1], xs[2], ws[1], xs[3], xs[4], cfg.kernel, cfg.stride, cfg.padding)
                    .ok_or_else(|| shape_err(name, format!("kernel {} exceeds padded input {xs:?}", cfg.kernel)))?;
                let bias = self.bias(ids, k, ws[1], name)?;
                let y = kernels::conv_forward(*alg, &g, x.data(), w.data(), bias);
                Ok((
                    Tensor::from_vec(&[k, g.batch, g.cout, g.oh, g.ow], y)?,
                    Saved::Geom(g),
                    f64::INFINITY,
                ))
            }
            Op::ConvTranspose { alg, cfg } => {
                let w = self.value(ids[1]);
                let k = check_alg(name, *alg, xs)?;
                let ws = w.shape();
                if xs.len() != 5
                    || ws.len() != 5
                    || ws[0] != k
                    || ws[1] != xs[2]
                    || ws[3] != cfg.kernel
                    || ws[4] != cfg.kernel
                {
                    return Err(shape_err(name, format!("input {xs:?} vs weight {ws:?} ({cfg:?})")));
                }
                let g = ConvGeom::transposed(xs[1], xs[2], ws[2], xs[3], xs[4], cfg.kernel, cfg.stride, cfg.padding)
                    .ok_or_else(|| shape_err(name, format!("invalid geometry for input {xs:?} ({cfg:?})")))?;
                let bias = self.bias(ids, k, ws[2], name)?;
                let y = kernels::conv_transpose_forward(*alg, &g, x.data(), w.data(), bias);
                Ok((
                    Tensor::from_vec(&[k, g.batch, g.cin, g.h, g.w], y)?,
                    Saved::Geom(g),
                    f64::INFINITY,
                ))
            }
            Op::Activation(a) => {
                let kink = match a {
                    Activation::Relu | Activation::LeakyRelu(_) => min_abs(x.data()),
                    _ => f64::INFINITY,
                };
                let a = *a;
                Ok((x.map(|v| t(a.apply(f(v)))), Saved::None, kink))
            }
            Op::Affine { scale, shift } => {
                let (s, b) = (t::<T>(*scale), t::<T>(*shift));
                none(x.map(|v| s * v + b))
            }
            Op::Add | Op::Mul => {
                let y = self.value(ids[1]);
                if xs != y.shape() {
                    return Err(shape_err(name, format!("{xs:?} vs {:?}", y.shape())));
                }
                let out: Vec<T> = if matches!(op, Op::Add) {
                    x.data().iter().zip(y.data()).map(|(&a, &b)| a + b).collect()
                } else {
                    x.data().iter().zip(y.data()).map(|(&a, &b)| a * b).collect()
                };
                none(Tensor::from_vec(xs, out)?)
            }
            Op::Abs => Ok((x.map(|v| v.abs()), Saved::None, min_abs(x.data()))),
            Op::Square => none(x.map(|v| v * v)),
            Op::Mean => none(Tensor::scalar(x.sum() / t(x.numel().max(1) as f64))),
            Op::Sum => none(Tensor::scalar(x.sum())),
            Op::Upsample(factor) => {
                let (maps, h, w) = planes(name, xs)?;
                if *factor == 0 {
                    return Err(shape_err(name, "factor must be positive"));
                }
                let y = kernels::upsample_forward(x.data(), maps, h, w, *factor);
                none(Tensor::from_vec(&[xs[0], xs[1], xs[2], h * factor, w * factor], y)?)
            }
            Op::Pool { kind, window } => {
                let (maps, h, w) = planes(name, xs)?;
                check_window(name, *window, h, w)?;
                let y = kernels::pool_forward(x.data(), maps, h, w, *window, *kind == PoolKind::Average);
                none(Tensor::from_vec(&[xs[0], xs[1], xs[2], h / window, w / window], y)?)
            }
            Op::GlobalSumPool => {
                let (_, h, w) = planes(name, xs)?;
                let y: Vec<T> = x.data().chunks(h * w).map(|c| c.iter().copied().sum()).collect();
                none(Tensor::from_vec(&xs[..3], y)?)
            }
            Op::GuidedMaxPool { window } => {
                let (maps, h, w) = planes(name, xs)?;
                if xs[0] != 4 {
                    return Err(shape_err(name, format!("needs quaternion input, got {xs:?}")));
                }
                check_window(name, *window, h, w)?;
                let (y, arg, gap) = kernels::guided_max_pool(x.data(), maps / 4, h, w, *window);
                let y = Tensor::from_vec(&[4, xs[1], xs[2], h / window, w / window], y)?;
                Ok((y, Saved::Argmax(arg), gap))
            }
            Op::BatchNorm { eps } => {
                let d = self.bn_dims(name, ids)?;
                if d.batch * d.spatial < 2 {
                    return Err(NnError::TooFewSamples {
                        need: 2,
                        got: d.batch * d.spatial,
                    });
                }
                let (gamma, beta) = (self.value(ids[1]), self.value(ids[2]));
                let (y, saved) = kernels::bn_train_forward(&d, x.data(), gamma.data(), beta.data(), t(*eps));
                Ok((Tensor::from_vec(xs, y)?, Saved::Bn(saved), f64::INFINITY))
            }
            Op::BatchNormFixed { eps, mean, var } => {
                let d = self.bn_dims(name, ids)?;
                if mean.len() != d.k * d.ch || var.len() != d.ch {
                    return Err(shape_err(name, "running statistics do not match the channel count"));
                }
                let (gamma, beta) = (self.value(ids[1]), self.value(ids[2]));
                let y = kernels::bn_eval_forward(&d, x.data(), gamma.data(), beta.data(), mean, var, t(*eps));
                none(Tensor::from_vec(xs, y)?)
            }
            Op::SpectralScale { mode, u, v } => {
                let (k, rows, cols) = spectral_dims(name, xs, u.len(), v.len())?;
                let sigma = spectral_sigma(*mode, k, rows, cols, x.data(), u, v);
                if sigma.iter().any(|s| !(*s > T::zero())) {
                    return Err(NnError::Config(format!(
                        "spectral estimate {:?} is not positive; run power iteration first",
                        sigma
                    )));
                }
                let n = rows * cols;
                let y: Vec<T> = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w / sigma[if *mode == SnMode::Full { 0 } else { i / n }])
                    .collect();
                Ok((Tensor::from_vec(xs, y)?, Saved::Sigma(sigma), f64::INFINITY))
            }
            Op::ToQuaternion => {
                if xs.len() < 3 || xs[0] != 1 || xs[2] % 4 != 0 {
                    return Err(shape_err(name, format!("need [1,B,4m,..], got {xs:?}")));
                }
                let m = x.numel() / (xs[1] * 4);
                let mut y = vec![T::zero(); x.numel()];
                for b in 0..xs[1] {
                    for a in 0..4 {
                        y[(a * xs[1] + b) * m..][..m].copy_from_slice(&x.data()[(b * 4 + a) * m..][..m]);
                    }
                }
                let mut shape = xs.to_vec();
                shape[0] = 4;
                shape[2] /= 4;
                none(Tensor::from_vec(&shape, y)?)
            }
            Op::ToReal => {
                if xs.len() < 3 || xs[0] != 4 {
                    return Err(shape_err(name, format!("need [4,B,m,..], got {xs:?}")));
                }
                let m = x.numel() / (xs[1] * 4);
                let mut y = vec![T::zero(); x.numel()];
                for b in 0..xs[1] {
                    for a in 0..4 {
                        y[(b * 4 + a) * m..][..m].copy_from_slice(&x.data()[(a * xs[1] + b) * m..][..m]);
                    }
                }
                let mut shape = xs.to_vec();
                shape[0] = 1;
                shape[2] *= 4;
                none(Tensor::from_vec(&shape, y)?)
            }
            Op::SumComponents => {
                let n = x.numel() / xs[0].max(1);
                let mut y = vec![T::zero(); n];
                for c in x.data().chunks(n) {
                    for (o, &v) in y.iter_mut().zip(c) {
                        *o += v;
                    }
                }
                let mut shape = xs.to_vec();
                shape[0] = 1;
                none(Tensor::from_vec(&shape, y)?)
            }
            Op::Reshape(shape) => none(x.clone().reshape(shape)?),
            Op::CrossEntropy { eps } => {
                let target = self.value(ids[1]);
                if xs != target.shape() || xs.len() < 2 {
                    return Err(shape_err(name, format!("{xs:?} vs {:?}", target.shape())));
                }
                let n = xs[1] as f64;
                let mut acc = 0.0;
                for (&e, &tg) in x.data().iter().zip(target.data()) {
                    let e = f(e).clamp(*eps, 1.0 - eps);
                    let tg = f(tg);
                    acc -= tg * e.ln() + (1.0 - tg) * (1.0 - e).ln();
                }
                none(Tensor::scalar(t(acc / n)))
            }
        }
    }

    fn bias(&self, ids: &[NodeId], k: usize, cout: usize, name: &'static str) -> Result<Option<&[T]>> {
        match ids.get(2) {
            None => Ok(None),
            Some(&b) => {
                let b = self.value(b);
                if b.shape() != [k, cout] {
                    return Err(shape_err(
                        name,
                        format!("bias {:?}, expected {:?}", b.shape(), [k, cout]),
                    ));
                }
                Ok(Some(b.data()))
            }
        }
    }

    fn bn_dims(&self, name: &'static str, ids: &[NodeId]) -> Result<BnDims> {
        let xs = self.value(ids[0]).shape();
        if xs.len() < 3 {
            return Err(shape_err(name, format!("need [K,B,C,..], got {xs:?}")));
        }
        let d = BnDims {
            k: xs[0],
            batch: xs[1],
            ch: xs[2],
            spatial: xs[3..].iter().product(),
        };
        let (g, b) = (self.value(ids[1]).shape(), self.value(ids[2]).shape());
        if g != [d.ch] || b != [d.k, d.ch] {
            return Err(shape_err(name, format!("gamma {g:?} / beta {b:?} for input {xs:?}")));
        }
        Ok(d)
    }

    /// Reverse sweep seeded with `d loss = 1`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.backward_with(loss, T::one())
    }

    /// Reverse sweep seeded with `d loss = upstream`.
    pub fn backward_with(&self, loss: NodeId, upstream: T) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::DanglingNode {
                id: loss.0,
                len: self.nodes.len(),
            });
        }
        let lv = self.value(loss);
        let real_scalar = lv.numel() == 1;
        let quat_scalar = lv.numel() == 4 && lv.shape()[0] == 4 && lv.data()[1..].iter().all(|v| *v == T::zero());
        if !(real_scalar || quat_scalar) {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        let mut seed = vec![T::zero(); lv.numel()];
        seed[0] = upstream;
        grads[loss.0] = Some(seed);
        let mut order = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            order.push(NodeId(i));
            let node = &self.nodes[i];
            for (slot, gi) in self.vjp(node, &g)? {
                let input = node.inputs[slot].0;
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&gi) {
                            *a += *v;
                        }
                    }
                    empty => *empty = Some(gi),
                }
            }
            grads[i] = Some(g);
        }
        let nodes: Vec<Option<Tensor<T>>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_vec(self.nodes[i].value.shape(), g).expect("gradient shape")))
            .collect();
        let mut params = BTreeMap::new();
        for (&pid, &nid) in &self.param_nodes {
            if let Some(Some(g)) = nodes.get(nid.0) {
                params.insert(pid, g.clone());
            }
        }
        Ok(Gradients {
            nodes,
            params,
            visit_order: order,
        })
    }

    /// Vector-Jacobian products for every input of `node`, keyed by input slot.
    fn vjp(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(usize, Vec<T>)>> {
        let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| self.value(i)).collect();
        let has_bias = ins.len() == 3;
        let out = match &node.op {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::Dense { alg } => {
                let (xs, ws) = (ins[0].shape(), ins[1].shape());
                let lg = kernels::dense_backward(*alg, xs[1], xs[2], ws[1], ins[0].data(), ins[1].data(), g);
                linear_out(lg, has_bias)
            }
            Op::Conv { alg, .. } => {
                let Saved::Geom(geom) = &node.saved else { unreachable!() };
                let lg = kernels::conv_backward(*alg, geom, ins[0].data(), ins[1].data(), g);
                linear_out(lg, has_bias)
            }
            Op::ConvTranspose { alg, .. } => {
                let Saved::Geom(geom) = &node.saved else { unreachable!() };
                let lg = kernels::conv_transpose_backward(*alg, geom, ins[0].data(), ins[1].data(), g);
                linear_out(lg, has_bias)
            }
            Op::Activation(a) => {
                let (x, y) = (ins[0].data(), node.value.data());
                let gx = match a {
                    Activation::Relu => zip3(g, x, y, |g, x, _| if x > T::zero() { g } else { T::zero() }),
                    Activation::LeakyRelu(s) => {
                        let s = t::<T>(*s);
                        zip3(g, x, y, |g, x, _| if x > T::zero() { g } else { g * s })
                    }
                    Activation::Tanh => zip3(g, x, y, |g, _, y| g * (T::one() - y * y)),
                    Activation::Sigmoid => zip3(g, x, y, |g, _, y| g * y * (T::one() - y)),
                };
                vec![(0, gx)]
            }
            Op::Affine { scale, .. } => {
                let s = t::<T>(*scale);
                vec![(0, g.iter().map(|&v| v * s).collect())]
            }
            Op::Add => vec![(0, g.to_vec()), (1, g.to_vec())],
            Op::Mul => vec![
                (0, g.iter().zip(ins[1].data()).map(|(&a, &b)| a * b).collect()),
                (1, g.iter().zip(ins[0].data()).map(|(&a, &b)| a * b).collect()),
            ],
            Op::Abs => vec![(0, g.iter().zip(ins[0].data()).map(|(&g, &x)| g * x.signum()).collect())],
            Op::Square => {
                let two = t::<T>(2.0);
                vec![(0, g.iter().zip(ins[0].data()).map(|(&g, &x)| two * g * x).collect())]
            }
            Op::Mean => {
                let n = ins[0].numel();
                vec![(0, vec![g[0] / t(n.max(1) as f64); n])]
            }
            Op::Sum => vec![(0, vec![g[0]; ins[0].numel()])],
            Op::Upsample(factor) => {
                let s = ins[0].shape();
                vec![(
                    0,
                    kernels::upsample_backward(g, s[0] * s[1] * s[2], s[3], s[4], *factor),
                )]
            }
            Op::Pool { kind, window } => {
                let s = ins[0].shape();
                let avg = *kind == PoolKind::Average;
                vec![(
                    0,
                    kernels::pool_backward(g, s[0] * s[1] * s[2], s[3], s[4], *window, avg),
                )]
            }
            Op::GlobalSumPool => {
                let s = ins[0].shape();
                let plane = s[3] * s[4];
                vec![(0, g.iter().flat_map(|&v| std::iter::repeat(v).take(plane)).collect())]
            }
            Op::GuidedMaxPool { window } => {
                let Saved::Argmax(arg) = &node.saved else {
                    unreachable!()
                };
                let s = ins[0].shape();
                vec![(
                    0,
                    kernels::guided_max_pool_backward(g, arg, s[1] * s[2], s[3], s[4], *window),
                )]
            }
            Op::BatchNorm { .. } => {
                let Saved::Bn(saved) = &node.saved else { unreachable!() };
                let d = self.bn_dims("batch_norm", &node.inputs)?;
                let (dx, dg, db) = kernels::bn_train_backward(&d, saved, ins[1].data(), g);
                vec![(0, dx), (1, dg), (2, db)]
            }
            Op::BatchNormFixed { eps, mean, var } => {
                let d = self.bn_dims("batch_norm_fixed", &node.inputs)?;
                let (x, gamma) = (ins[0].data(), ins[1].data());
                let mut dx = vec![T::zero(); x.len()];
                let mut dg = vec![T::zero(); d.ch];
                let mut db = vec![T::zero(); d.k * d.ch];
                for (i, (&gi, &xi)) in g.iter().zip(x).enumerate() {
                    let c = (i / d.spatial) % d.ch;
                    let a = i / (d.batch * d.ch * d.spatial);
                    let is = T::one() / (var[c] + t(*eps)).sqrt();
                    dx[i] = gi * gamma[c] * is;
                    dg[c] += gi * (xi - mean[a * d.ch + c]) * is;
                    db[a * d.ch + c] += gi;
                }
                vec![(0, dx), (1, dg), (2, db)]
            }
            Op::SpectralScale { mode, u, v } => {
                let Saved::Sigma(sigma) = &node.saved else {
                    unreachable!()
                };
                let w = ins[0].data();
                let (k, rows, cols) = spectral_dims("spectral_scale", ins[0].shape(), u.len(), v.len())?;
                let n = rows * cols;
                let mut gw = vec![T::zero(); w.len()];
                match mode {
                    SnMode::Full => {
                        let s = sigma[0];
                        let inner: T = g.iter().zip(w).map(|(&a, &b)| a * b).sum();
                        let coef = inner / (s * s);
                        for (o, &gi) in gw.iter_mut().zip(g) {
                            *o = gi / s;
                        }
                        let alg = Algebra::from_components(k).expect("checked by spectral_dims");
                        for term in alg.terms() {
                            let sg = t::<T>(term.sign) * coef;
                            let (uo, vi) = (&u[term.out * rows..][..rows], &v[term.input * cols..][..cols]);
                            let gm = &mut gw[term.weight * n..][..n];
                            for r in 0..rows {
                                let ur = uo[r] * sg;
                                for (gv, &vc) in gm[r * cols..][..cols].iter_mut().zip(vi) {
                                    *gv -= ur * vc;
                                }
                            }
                        }
                    }
                    SnMode::Split => {
                        for c in 0..k {
                            let s = sigma[c];
                            let (gc, wc) = (&g[c * n..][..n], &w[c * n..][..n]);
                            let inner: T = gc.iter().zip(wc).map(|(&a, &b)| a * b).sum();
                            let coef = inner / (s * s);
                            let (uc, vc) = (&u[c * rows..][..rows], &v[c * cols..][..cols]);
                            for r in 0..rows {
                                for j in 0..cols {
                                    let i = r * cols + j;
                                    gw[c * n + i] = gc[i] / s - coef * uc[r] * vc[j];
                                }
                            }
                        }
                    }
                }
                vec![(0, gw)]
            }
            Op::ToQuaternion => {
                let s = ins[0].shape();
                let m = ins[0].numel() / (s[1] * 4);
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..s[1] {
                    for a in 0..4 {
                        gx[(b * 4 + a) * m..][..m].copy_from_slice(&g[(a * s[1] + b) * m..][..m]);
                    }
                }
                vec![(0, gx)]
            }
            Op::ToReal => {
                let s = ins[0].shape();
                let m = ins[0].numel() / (s[1] * 4);
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..s[1] {
                    for a in 0..4 {
                        gx[(a * s[1] + b) * m..][..m].copy_from_slice(&g[(b * 4 + a) * m..][..m]);
                    }
                }
                vec![(0, gx)]
            }
            Op::SumComponents => {
                let k = ins[0].shape()[0];
                vec![(0, (0..k).flat_map(|_| g.iter().copied()).collect())]
            }
            Op::Reshape(_) => vec![(0, g.to_vec())],
            Op::CrossEntropy { eps } => {
                let n = t::<T>(ins[0].shape()[1] as f64);
                let (lo, hi) = (t::<T>(*eps), t::<T>(1.0 - eps));
                let mut ge = Vec::with_capacity(g.len());
                let mut gt = Vec::with_capacity(g.len());
                for (&e, &tg) in ins[0].data().iter().zip(ins[1].data()) {
                    let ec = e.max(lo).min(hi);
                    let d = if e < lo || e > hi {
                        T::zero()
                    } else {
                        -(tg / ec - (T::one() - tg) / (T::one() - ec))
                    };
                    ge.push(g[0] * d / n);
                    gt.push(-g[0] * (ec.ln() - (T::one() - ec).ln()) / n);
                }
                vec![(0, ge), (1, gt)]
            }
        };
        Ok(out)
    }
}

fn linear_out<T>(lg: kernels::LinearGrads<T>, has_bias: bool) -> Vec<(usize, Vec<T>)> {
    let mut v = vec![(0, lg.x), (1, lg.w)];
    if has_bias {
        v.push((2, lg.bias));
    }
    v
}

fn zip3<T: Scalar>(g: &[T], x: &[T], y: &[T], fun: impl Fn(T, T, T) -> T) -> Vec<T> {
    g.iter().zip(x).zip(y).map(|((&g, &x), &y)| fun(g, x, y)).collect()
}

fn min_abs<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| f(v.abs())).fold(f64::INFINITY, f64::min)
}

fn check_alg(name: &'static str, alg: Algebra, xs: &[usize]) -> Result<usize> {
    let k = alg.components();
    if xs.first() != Some(&k) {
        return Err(shape_err(
            name,
            format!("{alg:?} input needs leading axis {k}, got {xs:?}"),
        ));
    }
    Ok(k)
}

fn planes(name: &'static str, xs: &[usize]) -> Result<(usize, usize, usize)> {
    if xs.len() != 5 {
        return Err(shape_err(name, format!("need [K,B,C,H,W], got {xs:?}")));
    }
    Ok((xs[0] * xs[1] * xs[2], xs[3], xs[4]))
}

fn check_window(name: &'static str, window: usize, h: usize, w: usize) -> Result<()> {
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(shape_err(name, format!("window {window} must divide {h}x{w}")));
    }
    Ok(())
}

/// `(components, rows, cols)` of a weight viewed as `[K, rows, cols]`.
pub(crate) fn spectral_dims(name: &'static str, ws: &[usize], ul: usize, vl: usize) -> Result<(usize, usize, usize)> {
    if ws.len() < 3 || Algebra::from_components(ws[0]).is_none() {
        return Err(shape_err(
            name,
            format!("need [K,rows,..] with K in {{1,4}}, got {ws:?}"),
        ));
    }
    let (k, rows) = (ws[0], ws[1]);
    let cols: usize = ws[2..].iter().product();
    if ul != k * rows || vl != k * cols {
        return Err(shape_err(name, format!("u/v lengths {ul}/{vl} for weight {ws:?}")));
    }
    Ok((k, rows, cols))
}

/// `u^T M v` for the full block matrix, or one `u_c^T W_c v_c` per component.
pub(crate) fn spectral_sigma<T: Scalar>(
    mode: SnMode,
    k: usize,
    rows: usize,
    cols: usize,
    w: &[T],
    u: &[T],
    v: &[T],
) -> Vec<T> {
    let n = rows * cols;
    let bilinear = |m: usize, a: usize, b: usize| -> T {
        let (wm, ua, vb) = (&w[m * n..][..n], &u[a * rows..][..rows], &v[b * cols..][..cols]);
        (0..rows)
            .map(|r| ua[r] * wm[r * cols..][..cols].iter().zip(vb).map(|(&x, &y)| x * y).sum::<T>())
            .sum()
    };
    match mode {
        SnMode::Full => {
            let alg = Algebra::from_components(k).expect("component count validated");
            vec![alg
                .terms()
                .iter()
                .map(|tm| t::<T>(tm.sign) * bilinear(tm.weight, tm.out, tm.input))
                .sum()]
        }
        SnMode::Split => (0..k).map(|c| bilinear(c, c, c)).collect(),
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
    visit_order: Vec<NodeId>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node's value, if the node reaches the loss.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of a stored parameter, zeros when it is off the loss path.
    pub fn param_or_zeros(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    /// Nodes in the order the reverse sweep processed them.
    pub fn visit_order(&self) -> &[NodeId] {
        &self.visit_order
    }
}

/// Convenience builders over [`Tape::record`].
impl<T: Scalar> Tape<T> {
    pub fn dense(&mut self, alg: Algebra, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.record(Op::Dense { alg }, &with_bias(x, w, b))
    }

    pub fn conv2d(&mut self, alg: Algebra, cfg: ConvConfig, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.record(Op::Conv { alg, cfg }, &with_bias(x, w, b))
    }

    pub fn conv_transpose2d(
        &mut self,
        alg: Algebra,
        cfg: ConvConfig,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId> {
        self.record(Op::ConvTranspose { alg, cfg }, &with_bias(x, w, b))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId> {
        self.record(Op::Activation(kind), &[x])
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.record(Op::Affine { scale, shift }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Abs, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Square, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Sum, &[x])
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        self.record(Op::Upsample(factor), &[x])
    }

    pub fn pool(&mut self, x: NodeId, kind: PoolKind, window: usize) -> Result<NodeId> {
        self.record(Op::Pool { kind, window }, &[x])
    }

    pub fn global_sum_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::GlobalSumPool, &[x])
    }

    pub fn guided_max_pool(&mut self, x: NodeId, window: usize) -> Result<NodeId> {
        self.record(Op::GuidedMaxPool { window }, &[x])
    }

    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.record(Op::BatchNorm { eps }, &[x, gamma, beta])
    }

    pub fn batch_norm_fixed(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        mean: Vec<T>,
        var: Vec<T>,
    ) -> Result<NodeId> {
        self.record(Op::BatchNormFixed { eps, mean, var }, &[x, gamma, beta])
    }

    pub fn spectral_scale(&mut self, w: NodeId, mode: SnMode, u: Vec<T>, v: Vec<T>) -> Result<NodeId> {
        self.record(Op::SpectralScale { mode, u, v }, &[w])
    }

    pub fn to_quaternion(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::ToQuaternion, &[x])
    }

    pub fn to_real(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::ToReal, &[x])
    }

    pub fn sum_components(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::SumComponents, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::Reshape(shape.to_vec()), &[x])
    }

    pub fn cross_entropy(&mut self, estimate: NodeId, target: NodeId, eps: f64) -> Result<NodeId> {
        self.record(Op::CrossEntropy { eps }, &[estimate, target])
    }
}

fn with_bias(x: NodeId, w: NodeId, b: Option<NodeId>) -> Vec<NodeId> {
    let mut v = vec![x, w];
    v.extend(b);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use qgan_quat::Quaternion;

    #[test]
    fn constant_leaf_and_distinct_ids() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        assert!(tape.inputs(c).is_empty());
        let a = tape.square(c).unwrap();
        let b = tape.square(c).unwrap();
        assert_ne!(a, b);
        assert_eq!(tape.value(a).data(), &[4.0]);
    }

    #[test]
    fn reverse_order_of_a_chain() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(0.5));
        let a = tape.square(c).unwrap();
        let b = tape.affine(a, 3.0, 1.0).unwrap();
        let d = tape.mean(b).unwrap();
        let g = tape.backward(d).unwrap();
        assert_eq!(g.visit_order(), &[d, b, a, c]);
        assert_eq!(g.node(c).unwrap().data(), &[3.0]);
    }

    #[test]
    fn dangling_and_arity_errors() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(
            tape.square(NodeId(7)),
            Err(NnError::DanglingNode { id: 7, len: 1 })
        ));
        assert!(matches!(tape.record(Op::Add, &[c]), Err(NnError::Arity { .. })));
        let v = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(v), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn constant_loss_gives_zero_parameter_gradients() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", 1, Tensor::full(&[3], 1.0));
        let mut tape = Tape::new();
        let _ = tape.param(&store, p);
        let c = tape.constant(Tensor::scalar(5.0));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.param_or_zeros(&store, p).data(), &[0.0; 3]);
    }

    #[test]
    fn quaternion_dense_gradient_matches_hand_expansion() {
        // loss = sum of the four components of w ⊗ x, 1x1 case.
        let (w, x) = (
            Quaternion::new(0.3, -0.7, 1.1, 0.4),
            Quaternion::new(2.0, -1.0, 0.5, 3.0),
        );
        let mut store = ParamStore::<f64>::new();
        let pw = store.add("w", 4, Tensor::from_vec(&[4, 1, 1], w.to_array().to_vec()).unwrap());
        let mut tape = Tape::new();
        let xn = tape.constant(Tensor::from_vec(&[4, 1, 1], x.to_array().to_vec()).unwrap());
        let wn = tape.param(&store, pw);
        let y = tape.dense(Algebra::Quaternion, xn, wn, None).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        // Collect the coefficient of each W_c across the four expanded output lines.
        let [x0, x1, x2, x3] = x.to_array();
        let want = [
            x0 + x1 + x2 + x3,
            x0 - x1 + x2 - x3,
            x0 - x1 - x2 + x3,
            x0 + x1 - x2 - x3,
        ];
        for (a, b) in g.param(pw).unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[4], vec![0.3, -1.2, 0.8, 2.0]).unwrap());
        let a = tape.activation(Activation::Tanh, x).unwrap();
        let s = tape.square(a).unwrap();
        let m = tape.mean(s).unwrap();
        let g1 = tape.backward_with(m, 1.0).unwrap();
        let g2 = tape.backward_with(m, 2.0).unwrap();
        for (a, b) in g1.node(x).unwrap().data().iter().zip(g2.node(x).unwrap().data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quaternion_scalar_loss_is_accepted() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[4, 1], vec![1.5, 0.0, 0.0, 0.0]).unwrap());
        let y = tape.affine(x, 2.0, 0.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.node(x).unwrap().data(), &[2.0, 0.0, 0.0, 0.0]);
        let z = tape.affine(x, 1.0, 1.0).unwrap();
        assert!(tape.backward(z).is_err());
    }

    #[test]
    fn to_quaternion_splits_channel_blocks() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 2, 8], |i| i as f64));
        let q = tape.to_quaternion(x).unwrap();
        assert_eq!(tape.value(q).shape(), &[4, 2, 2]);
        assert_eq!(&tape.value(q).data()[..4], &[0.0, 1.0, 8.0, 9.0]);
        let r = tape.to_real(q).unwrap();
        assert_eq!(tape.value(r), tape.value(x));
    }
}
