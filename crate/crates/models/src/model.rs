use qgan_nn::norm::batch_norm_node;
use qgan_nn::{
    Activation, Algebra, BnMode, ConvConfig, NodeId, ParamId, ParamStore, PoolKind, RunningStats, SnMode, SpectralNorm,
    Tape,
};
use qgan_quat::{Scalar, Tensor};

use crate::spec::{Family, ModelSpec};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    Dense,
    Conv(ConvConfig),
    ConvTranspose(ConvConfig),
}

/// One step of a model graph. Parameters live in the model's store and are
/// referenced by id; shapes carry the component axis first and the batch
/// axis second.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear {
        kind: LinearKind,
        alg: Algebra,
        weight: ParamId,
        bias: Option<ParamId>,
        sn: Option<usize>,
    },
    /// Batch normalization with running statistics `stats`.
    Norm {
        gamma: ParamId,
        beta: ParamId,
        stats: usize,
    },
    Act(Activation),
    Upsample(usize),
    AvgPool(usize),
    GlobalSumPool,
    SumComponents,
    ToQuaternion,
    ToReal,
    /// Reshape of the per-sample part, keeping the component and batch axes.
    Reshape(Vec<usize>),
    /// `main(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual {
        main: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEntry<T> {
    pub weight: ParamId,
    pub norm: SpectralNorm<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub role: Role,
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub layers: Vec<Layer>,
    pub norms: Vec<RunningStats<T>>,
    pub spectral: Vec<SpectralEntry<T>>,
    /// Components of the input (1 for images and noise).
    pub input_components: usize,
    /// Input shape after the component and batch axes.
    pub input_shape: Vec<usize>,
}

struct Ctx<'a, T> {
    store: &'a ParamStore<T>,
    norms: &'a mut [RunningStats<T>],
    spectral: &'a [SpectralEntry<T>],
    mode: BnMode,
}

impl<T: Scalar> Ctx<'_, T> {
    fn run(&mut self, tape: &mut Tape<T>, layers: &[Layer], mut x: NodeId) -> Result<NodeId> {
        for layer in layers {
            x = self.step(tape, layer, x)?;
        }
        Ok(x)
    }

    fn step(&mut self, tape: &mut Tape<T>, layer: &Layer, x: NodeId) -> Result<NodeId> {
        Ok(match layer {
            Layer::Linear {
                kind,
                alg,
                weight,
                bias,
                sn,
            } => {
                let mut w = tape.param(self.store, *weight);
                if let Some(i) = sn {
                    w = self.spectral[*i].norm.record(tape, w)?;
                }
                let b = bias.map(|b| tape.param(self.store, b));
                match kind {
                    LinearKind::Dense => tape.dense(*alg, x, w, b)?,
                    LinearKind::Conv(cfg) => tape.conv2d(*alg, *cfg, x, w, b)?,
                    LinearKind::ConvTranspose(cfg) => tape.conv_transpose2d(*alg, *cfg, x, w, b)?,
                }
            }
            Layer::Norm { gamma, beta, stats } => {
                let g = tape.param(self.store, *gamma);
                let b = tape.param(self.store, *beta);
                batch_norm_node(tape, x, g, b, &mut self.norms[*stats], self.mode)?
            }
            Layer::Act(a) => tape.activation(*a, x)?,
            Layer::Upsample(f) => tape.upsample(x, *f)?,
            Layer::AvgPool(w) => tape.pool(x, PoolKind::Average, *w)?,
            Layer::GlobalSumPool => tape.global_sum_pool(x)?,
            Layer::SumComponents => tape.sum_components(x)?,
            Layer::ToQuaternion => tape.to_quaternion(x)?,
            Layer::ToReal => tape.to_real(x)?,
            Layer::Reshape(s) => {
                let xs = tape.value(x).shape();
                let mut shape = vec![xs[0], xs[1]];
                shape.extend_from_slice(s);
                tape.reshape(x, &shape)?
            }
            Layer::Residual { main, shortcut } => {
                let m = self.run(tape, main, x)?;
                let s = self.run(tape, shortcut, x)?;
                tape.add(m, s)?
            }
        })
    }
}

fn shape_error(msg: String) -> ModelError {
    ModelError::Input(msg)
}

impl<T: Scalar> Model<T> {
    /// Records the forward pass of `x` (`[K, B, ..input_shape]`). Training
    /// mode normalizes with batch statistics and updates running averages;
    /// spectrally normalized weights use the current singular-vector
    /// estimates.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: NodeId, mode: BnMode) -> Result<NodeId> {
        self.check_input(tape.value(x).shape())?;
        let mut ctx = Ctx {
            store: &self.store,
            norms: &mut self.norms,
            spectral: &self.spectral,
            mode,
        };
        ctx.run(tape, &self.layers, x)
    }

    /// [`Model::forward`] with parameter values taken from `store`, which
    /// must have the layout of `self.store`.
    pub fn forward_with(
        &mut self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: NodeId,
        mode: BnMode,
    ) -> Result<NodeId> {
        self.check_input(tape.value(x).shape())?;
        if store.len() != self.store.len() {
            return Err(shape_error(format!(
                "store has {} parameters, model {}",
                store.len(),
                self.store.len()
            )));
        }
        let mut ctx = Ctx {
            store,
            norms: &mut self.norms,
            spectral: &self.spectral,
            mode,
        };
        ctx.run(tape, &self.layers, x)
    }

    fn check_input(&self, xs: &[usize]) -> Result<()> {
        if xs.len() != self.input_shape.len() + 2 || xs[0] != self.input_components || xs[2..] != self.input_shape[..] {
            return Err(shape_error(format!(
                "expected input [{}, B, {:?}], got {xs:?}",
                self.input_components, self.input_shape
            )));
        }
        Ok(())
    }

    pub fn forward_tensor(&mut self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let y = self.forward(&mut tape, xn, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Number of trainable real scalars.
    pub fn count_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn outputs_probabilities(&self) -> bool {
        self.role == Role::Discriminator && self.spec.family == Family::Dcgan
    }

    /// Advances one power-iteration round per normalized weight and returns
    /// the new estimates.
    pub fn update_spectral_norms(&mut self) -> Result<Vec<Vec<T>>> {
        let store = &self.store;
        self.spectral
            .iter_mut()
            .map(|e| Ok(e.norm.update(store.get(e.weight))?))
            .collect()
    }

    /// Ids of every dense/convolution weight, in graph order.
    pub fn linear_weights(&self) -> Vec<ParamId> {
        fn walk(layers: &[Layer], out: &mut Vec<ParamId>) {
            for l in layers {
                match l {
                    Layer::Linear { weight, .. } => out.push(*weight),
                    Layer::Residual { main, shortcut } => {
                        walk(main, out);
                        walk(shortcut, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    /// The weight as used in the forward pass (divided by its spectral
    /// estimate when normalized).
    pub fn effective_weight(&self, id: ParamId) -> Result<Tensor<T>> {
        let w = self.store.get(id);
        match self.spectral.iter().find(|e| e.weight == id) {
            Some(e) => Ok(e.norm.normalize(w)?),
            None => Ok(w.clone()),
        }
    }

    /// Output shape for a batch of `batch` inputs.
    pub fn output_shape(&self, batch: usize) -> Result<Vec<usize>> {
        let mut s = vec![self.input_components, batch];
        s.extend_from_slice(&self.input_shape);
        shapes(&self.store, &self.layers, s)
    }
}

fn shapes<T: Scalar>(store: &ParamStore<T>, layers: &[Layer], mut s: Vec<usize>) -> Result<Vec<usize>> {
    for l in layers {
        s = match l {
            Layer::Linear { kind, weight, .. } => {
                let ws = store.get(*weight).shape();
                match kind {
                    LinearKind::Dense => vec![ws[0], s[1], ws[1]],
                    LinearKind::Conv(c) => {
                        let o = |n| c.output_size(n).ok_or_else(|| shape_error(format!("conv on {s:?}")));
                        vec![ws[0], s[1], ws[1], o(s[3])?, o(s[4])?]
                    }
                    LinearKind::ConvTranspose(c) => {
                        let o = |n| {
                            c.transposed_output_size(n)
                                .ok_or_else(|| shape_error(format!("conv on {s:?}")))
                        };
                        vec![ws[0], s[1], ws[2], o(s[3])?, o(s[4])?]
                    }
                }
            }
            Layer::Norm { .. } | Layer::Act(_) => s,
            Layer::Upsample(f) => vec![s[0], s[1], s[2], s[3] * f, s[4] * f],
            Layer::AvgPool(w) => vec![s[0], s[1], s[2], s[3] / w, s[4] / w],
            Layer::GlobalSumPool => s[..3].to_vec(),
            Layer::SumComponents => [&[1][..], &s[1..]].concat(),
            Layer::ToQuaternion => [&[4, s[1], s[2] / 4][..], &s[3..]].concat(),
            Layer::ToReal => [&[1, s[1], s[2] * 4][..], &s[3..]].concat(),
            Layer::Reshape(r) => [&s[..2], &r[..]].concat(),
            Layer::Residual { main, .. } => shapes(store, main, s)?,
        };
    }
    Ok(s)
}

/// Largest singular value of every weight's constructed real matrix, as
/// used in the forward pass, tracked by warm-started power iteration.
#[derive(Debug, Clone)]
pub struct SigmaMonitor<T> {
    pub weights: Vec<ParamId>,
    pub full: Vec<SpectralNorm<T>>,
    pub split: Vec<SpectralNorm<T>>,
}

/// One observation of a [`SigmaMonitor`].
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport {
    /// Per weight, sigma of the whole block matrix.
    pub full: Vec<f64>,
    /// Per weight, sigma of each component submatrix.
    pub split: Vec<Vec<f64>>,
}

impl SigmaReport {
    pub fn max_full(&self) -> f64 {
        self.full.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_split(&self) -> f64 {
        self.split.iter().flatten().copied().fold(0.0, f64::max)
    }
}

impl<T: Scalar> SigmaMonitor<T> {
    /// Starts the estimates with `warmup` iterations on the current weights;
    /// each [`SigmaMonitor::observe`] then runs `iters` more.
    pub fn new(model: &Model<T>, seed: u64, warmup: usize, iters: usize) -> Result<Self> {
        let weights = model.linear_weights();
        let mut full = Vec::new();
        let mut split = Vec::new();
        for (i, &id) in weights.iter().enumerate() {
            let shape = model.store.get(id).shape();
            let s = seed.wrapping_add(1000 * i as u64);
            full.push(SpectralNorm::new(SnMode::Full, shape, s)?);
            split.push(SpectralNorm::new(SnMode::Split, shape, s ^ 0xabcd)?);
        }
        let mut m = SigmaMonitor { weights, full, split };
        m.set_iters(warmup);
        m.observe(model)?;
        m.set_iters(iters);
        Ok(m)
    }

    fn set_iters(&mut self, n: usize) {
        for s in self.full.iter_mut().chain(&mut self.split) {
            s.set_power_iters(n);
        }
    }

    pub fn observe(&mut self, model: &Model<T>) -> Result<SigmaReport> {
        let mut full = Vec::new();
        let mut split = Vec::new();
        for (i, &id) in self.weights.iter().enumerate() {
            let w = model.effective_weight(id)?;
            full.push(Scalar::to_f64(self.full[i].update(&w)?[0]));
            split.push(self.split[i].update(&w)?.into_iter().map(Scalar::to_f64).collect());
        }
        Ok(SigmaReport { full, split })
    }
}
