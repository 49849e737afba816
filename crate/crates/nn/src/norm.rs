//! Quaternion batch normalization, the augmented covariance diagnostic and
//! spectral normalization by power iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use qgan_quat::{Quaternion, Scalar, Tensor};

use crate::algebra::Algebra;
use crate::autodiff::{spectral_dims, spectral_sigma, NodeId, SnMode, Tape};
use crate::error::shape_err;
use crate::kernels::{channel_stats, BnDims};
use crate::layers::QWeight;
use crate::{NnError, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

fn bn_dims(op: &'static str, shape: &[usize]) -> Result<BnDims> {
    if shape.len() < 3 {
        return Err(shape_err(op, format!("need [K,B,C,..], got {shape:?}")));
    }
    Ok(BnDims {
        k: shape[0],
        batch: shape[1],
        ch: shape[2],
        spatial: shape[3..].iter().product(),
    })
}

/// Per-channel quaternion mean of `x [4, B, C, ..]`, pooled over batch and
/// spatial positions.
pub fn quaternion_mean<T: Scalar>(x: &Tensor<T>) -> Result<Vec<Quaternion<T>>> {
    let d = bn_dims("quaternion_mean", x.shape())?;
    if d.k != 4 {
        return Err(shape_err(
            "quaternion_mean",
            format!("need a quaternion tensor, got {:?}", x.shape()),
        ));
    }
    if d.batch == 0 {
        return Err(NnError::TooFewSamples { need: 1, got: 0 });
    }
    let (mean, _) = channel_stats(&d, x.data());
    Ok((0..d.ch)
        .map(|c| Quaternion::new(mean[c], mean[d.ch + c], mean[2 * d.ch + c], mean[3 * d.ch + c]))
        .collect())
}

/// Per-channel `4 sigma^2`: the sum of the four biased component variances
/// about the quaternion mean.
pub fn qproper_variance<T: Scalar>(x: &Tensor<T>) -> Result<Vec<T>> {
    let d = bn_dims("qproper_variance", x.shape())?;
    if d.batch < 2 {
        return Err(NnError::TooFewSamples { need: 2, got: d.batch });
    }
    Ok(channel_stats(&d, x.data()).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential moving averages of the batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    /// `[K, C]` component means.
    pub mean: Vec<T>,
    /// `[C]` summed component variances.
    pub var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    pub initialized: bool,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(components: usize, channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); components * channels],
            var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            initialized: false,
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`; the first
    /// update copies the batch statistics.
    pub fn update(&mut self, mean: &[T], var: &[T]) {
        if !self.initialized {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(var);
            self.initialized = true;
            return;
        }
        let m = T::from_f64(self.momentum);
        let r = T::one() - m;
        for (a, &b) in self.mean.iter_mut().zip(mean) {
            *a = m * *a + r * b;
        }
        for (a, &b) in self.var.iter_mut().zip(var) {
            *a = m * *a + r * b;
        }
    }
}

/// Records a normalization node: batch statistics (and a running-stat
/// update) in training, the running statistics in evaluation.
pub fn batch_norm_node<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running: &mut RunningStats<T>,
    mode: BnMode,
) -> Result<NodeId> {
    match mode {
        BnMode::Train => {
            let y = tape.batch_norm(x, gamma, beta, running.eps)?;
            let d = bn_dims("batch_norm", tape.value(x).shape())?;
            let (mean, var) = channel_stats(&d, tape.value(x).data());
            running.update(&mean, &var);
            Ok(y)
        }
        BnMode::Eval => {
            if !running.initialized {
                return Err(NnError::UninitializedStats);
            }
            tape.batch_norm_fixed(x, gamma, beta, running.eps, running.mean.clone(), running.var.clone())
        }
    }
}

/// Parameters and running statistics of one quaternion normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QBNState<T> {
    /// One real scale per quaternion channel.
    pub gamma: Vec<T>,
    /// One quaternion shift per channel, component-major `[4, C]`.
    pub beta: Vec<T>,
    pub running: RunningStats<T>,
}

impl<T: Scalar> QBNState<T> {
    pub fn new(channels: usize) -> Self {
        QBNState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); 4 * channels],
            running: RunningStats::new(4, channels),
        }
    }
}

/// `gamma (x - mu) / sqrt(4 sigma^2 + eps) + beta` on `x [4, B, C, ..]`.
pub fn qbn_forward<T: Scalar>(x: &Tensor<T>, state: &mut QBNState<T>, mode: BnMode) -> Result<Tensor<T>> {
    let c = state.gamma.len();
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let g = tape.constant(Tensor::from_vec(&[c], state.gamma.clone())?);
    let b = tape.constant(Tensor::from_vec(&[4, c], state.beta.clone())?);
    let y = batch_norm_node(&mut tape, xn, g, b, &mut state.running, mode)?;
    Ok(tape.value(y).clone())
}

/// Second-order statistics of a quaternion vector and its three
/// perpendicular involutions. Block `(a, b)` holds
/// `E{(q^a - mu^a)(q^b - mu^b)^*}` as a `d x d` quaternion matrix, with
/// `q^0 = q` and `q^1, q^2, q^3` the involutions about `i, j, k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCovariance {
    pub dim: usize,
    blocks: Vec<Quaternion<f64>>,
}

impl AugmentedCovariance {
    pub fn block_entry(&self, a: usize, b: usize, r: usize, s: usize) -> Quaternion<f64> {
        let d = self.dim;
        self.blocks[((a * 4 + b) * d + r) * d + s]
    }

    /// Real part as a symmetric `4d x 4d` matrix, row-major.
    pub fn real_part(&self) -> Vec<f64> {
        let n = 4 * self.dim;
        let mut m = vec![0.0; n * n];
        for a in 0..4 {
            for b in 0..4 {
                for r in 0..self.dim {
                    for s in 0..self.dim {
                        m[(a * self.dim + r) * n + b * self.dim + s] = self.block_entry(a, b, r, s).q0;
                    }
                }
            }
        }
        m
    }

    fn block_norm_sqr(&self, a: usize, b: usize) -> f64 {
        let d = self.dim;
        self.blocks[(a * 4 + b) * d * d..][..d * d]
            .iter()
            .map(|q| q.norm_sqr())
            .sum()
    }

    /// Frobenius mass of the blocks with `a != b` relative to the whole
    /// matrix (0 for an all-zero matrix).
    pub fn off_diagonal_ratio(&self) -> f64 {
        let mut off = 0.0;
        let mut total = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let n = self.block_norm_sqr(a, b);
                total += n;
                if a != b {
                    off += n;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            (off / total).sqrt()
        }
    }
}

/// Augmented covariance of `x [4, B, d]`.
pub fn augmented_covariance<T: Scalar>(x: &Tensor<T>) -> Result<AugmentedCovariance> {
    let s = x.shape();
    if s.len() != 3 || s[0] != 4 {
        return Err(shape_err("augmented_covariance", format!("need [4,B,d], got {s:?}")));
    }
    let (n, d) = (s[1], s[2]);
    if n < 2 {
        return Err(NnError::TooFewSamples { need: 2, got: n });
    }
    let get = |b: usize, r: usize| -> Quaternion<f64> {
        let v = |c: usize| Scalar::to_f64(x.data()[(c * n + b) * d + r]);
        Quaternion::new(v(0), v(1), v(2), v(3))
    };
    let invol = |q: Quaternion<f64>, a: usize| match a {
        0 => q,
        1 => q.involution_i(),
        2 => q.involution_j(),
        _ => q.involution_k(),
    };
    let mut mean = vec![Quaternion::zero(); d];
    for b in 0..n {
        for (r, m) in mean.iter_mut().enumerate() {
            *m = *m + get(b, r);
        }
    }
    for m in mean.iter_mut() {
        *m = m.scale(1.0 / n as f64);
    }
    let mut blocks = vec![Quaternion::zero(); 16 * d * d];
    let mut centered = vec![[Quaternion::zero(); 4]; d];
    for b in 0..n {
        for (r, cr) in centered.iter_mut().enumerate() {
            let q = get(b, r) - mean[r];
            for (a, slot) in cr.iter_mut().enumerate() {
                *slot = invol(q, a);
            }
        }
        for a in 0..4 {
            for bb in 0..4 {
                for r in 0..d {
                    for s2 in 0..d {
                        let i = ((a * 4 + bb) * d + r) * d + s2;
                        blocks[i] = blocks[i] + centered[r][a] * centered[s2][bb].conjugate();
                    }
                }
            }
        }
    }
    for q in blocks.iter_mut() {
        *q = q.scale(1.0 / n as f64);
    }
    Ok(AugmentedCovariance { dim: d, blocks })
}

/// A real linear map known only through products with vectors.
pub trait LinearOperator<T> {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = M v`.
    fn apply(&self, v: &[T], out: &mut [T]);
    /// `out = M^T u`.
    fn apply_t(&self, u: &[T], out: &mut [T]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone, Copy)]
pub struct MatrixOp<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
}

impl<T: Scalar> LinearOperator<T> for MatrixOp<'_, T> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.data[r * self.cols..][..self.cols]
                .iter()
                .zip(v)
                .map(|(&a, &b)| a * b)
                .sum();
        }
    }

    fn apply_t(&self, u: &[T], out: &mut [T]) {
        out[..self.cols].fill(T::zero());
        for r in 0..self.rows {
            let ur = u[r];
            for (o, &a) in out.iter_mut().zip(&self.data[r * self.cols..][..self.cols]) {
                *o += ur * a;
            }
        }
    }
}

/// The block-structured real matrix of a weight `[K, rows, cols..]` (the
/// 4x4 signed layout of the Hamilton product for quaternions), applied
/// without materializing it.
#[derive(Debug, Clone, Copy)]
pub struct BlockOp<'a, T> {
    pub weight: &'a [T],
    pub alg: Algebra,
    pub rows: usize,
    pub cols: usize,
}

impl<'a, T: Scalar> BlockOp<'a, T> {
    pub fn new(w: &'a Tensor<T>) -> Result<Self> {
        let s = w.shape();
        let alg = Algebra::from_components(s.first().copied().unwrap_or(0))
            .filter(|_| s.len() >= 3)
            .ok_or_else(|| shape_err("block_op", format!("need [K,rows,..] with K in {{1,4}}, got {s:?}")))?;
        Ok(BlockOp {
            weight: w.data(),
            alg,
            rows: s[1],
            cols: s[2..].iter().product(),
        })
    }

    fn sub(&self, m: usize) -> MatrixOp<'a, T> {
        let n = self.rows * self.cols;
        MatrixOp {
            data: &self.weight[m * n..][..n],
            rows: self.rows,
            cols: self.cols,
        }
    }
}

impl<T: Scalar> LinearOperator<T> for BlockOp<'_, T> {
    fn rows(&self) -> usize {
        self.alg.components() * self.rows
    }

    fn cols(&self) -> usize {
        self.alg.components() * self.cols
    }

    fn apply(&self, v: &[T], out: &mut [T]) {
        out.fill(T::zero());
        let mut tmp = vec![T::zero(); self.rows];
        for t in self.alg.terms() {
            self.sub(t.weight)
                .apply(&v[t.input * self.cols..][..self.cols], &mut tmp);
            let s = T::from_f64(t.sign);
            for (o, &x) in out[t.out * self.rows..][..self.rows].iter_mut().zip(&tmp) {
                *o += s * x;
            }
        }
    }

    fn apply_t(&self, u: &[T], out: &mut [T]) {
        out.fill(T::zero());
        let mut tmp = vec![T::zero(); self.cols];
        for t in self.alg.terms() {
            self.sub(t.weight)
                .apply_t(&u[t.out * self.rows..][..self.rows], &mut tmp);
            let s = T::from_f64(t.sign);
            for (o, &x) in out[t.input * self.cols..][..self.cols].iter_mut().zip(&tmp) {
                *o += s * x;
            }
        }
    }
}

/// Explicit block-structured real matrix of `w`, row-major
/// `(K rows) x (K cols)`.
pub fn construct_real_matrix<T: Scalar>(w: &Tensor<T>) -> Result<(Vec<T>, usize, usize)> {
    let op = BlockOp::new(w)?;
    let (r, c) = (op.rows(), op.cols());
    let mut m = vec![T::zero(); r * c];
    let mut e = vec![T::zero(); c];
    let mut col = vec![T::zero(); r];
    for j in 0..c {
        e[j] = T::one();
        op.apply(&e, &mut col);
        for i in 0..r {
            m[i * c + j] = col[i];
        }
        e[j] = T::zero();
    }
    Ok((m, r, c))
}

/// Persisted singular-vector estimates for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnState<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub power_iters: usize,
    /// Set when the last update met a zero product (zero matrix).
    pub degenerate: bool,
}

impl<T: Scalar> SnState<T> {
    /// Random unit `u` drawn from `seed`.
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<T> = (0..rows)
            .map(|_| T::from_f64(StandardNormal.sample(&mut rng)))
            .collect();
        normalize(&mut u);
        SnState {
            u,
            v: vec![T::zero(); cols],
            power_iters: 1,
            degenerate: false,
        }
    }
}

fn normalize<T: Scalar>(x: &mut [T]) -> T {
    let n = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n > T::zero() {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

/// Runs `state.power_iters` rounds of `v <- M^T u / |.|`, `u <- M v / |.|`
/// and returns `sigma = u^T M v`. A zero matrix yields 0 and sets
/// `state.degenerate`.
pub fn power_iteration_sigma<T: Scalar, O: LinearOperator<T>>(op: &O, state: &mut SnState<T>) -> T {
    state.degenerate = false;
    state.v.resize(op.cols(), T::zero());
    let mut sigma = T::zero();
    for _ in 0..state.power_iters.max(1) {
        op.apply_t(&state.u, &mut state.v);
        if normalize(&mut state.v) == T::zero() {
            state.degenerate = true;
            return T::zero();
        }
        op.apply(&state.v, &mut state.u);
        sigma = normalize(&mut state.u);
        if sigma == T::zero() {
            state.degenerate = true;
            return T::zero();
        }
    }
    sigma
}

/// Spectral normalization state for one weight tensor `[K, rows, cols..]`:
/// one [`SnState`] for [`SnMode::Full`], one per component for
/// [`SnMode::Split`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm<T> {
    pub mode: SnMode,
    pub states: Vec<SnState<T>>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> SpectralNorm<T> {
    pub fn new(mode: SnMode, shape: &[usize], seed: u64) -> Result<Self> {
        if shape.len() < 3 || Algebra::from_components(shape[0]).is_none() {
            return Err(shape_err(
                "spectral_norm",
                format!("need [K,rows,..] with K in {{1,4}}, got {shape:?}"),
            ));
        }
        let (k, rows, cols) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
        let states = match mode {
            SnMode::Full => vec![SnState::new(k * rows, k * cols, seed)],
            SnMode::Split => (0..k)
                .map(|c| SnState::new(rows, cols, seed.wrapping_add(c as u64)))
                .collect(),
        };
        Ok(SpectralNorm {
            mode,
            states,
            shape: shape.to_vec(),
        })
    }

    fn check(&self, w: &Tensor<T>) -> Result<()> {
        if w.shape() != self.shape.as_slice() {
            return Err(shape_err(
                "spectral_norm",
                format!("state for {:?}, weight {:?}", self.shape, w.shape()),
            ));
        }
        Ok(())
    }

    /// Advance the power iteration on `w`; returns one sigma per state.
    pub fn update(&mut self, w: &Tensor<T>) -> Result<Vec<T>> {
        self.check(w)?;
        let op = BlockOp::new(w)?;
        Ok(match self.mode {
            SnMode::Full => vec![power_iteration_sigma(&op, &mut self.states[0])],
            SnMode::Split => self
                .states
                .iter_mut()
                .enumerate()
                .map(|(c, st)| power_iteration_sigma(&op.sub(c), st))
                .collect(),
        })
    }

    pub fn set_power_iters(&mut self, n: usize) {
        for s in &mut self.states {
            s.power_iters = n;
        }
    }

    pub fn degenerate(&self) -> bool {
        self.states.iter().any(|s| s.degenerate)
    }

    /// Concatenated `(u, v)` in the layout of [`crate::autodiff::Op::SpectralScale`].
    pub fn vectors(&self) -> (Vec<T>, Vec<T>) {
        let u = self.states.iter().flat_map(|s| s.u.iter().copied()).collect();
        let v = self.states.iter().flat_map(|s| s.v.iter().copied()).collect();
        (u, v)
    }

    /// Current estimate `u^T M v` for `w` without advancing the iteration.
    pub fn sigma(&self, w: &Tensor<T>) -> Result<Vec<T>> {
        self.check(w)?;
        let (u, v) = self.vectors();
        let (k, rows, cols) = spectral_dims("spectral_norm", w.shape(), u.len(), v.len())?;
        Ok(spectral_sigma(self.mode, k, rows, cols, w.data(), &u, &v))
    }

    /// `w / sigma` using the current estimates.
    pub fn normalize(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        let sigma = self.sigma(w)?;
        let n = w.numel() / sigma.len();
        if sigma.iter().any(|s| !(*s > T::zero())) {
            return Err(NnError::Config("spectral estimate is not positive".into()));
        }
        Ok(Tensor::from_vec(
            w.shape(),
            w.data().iter().enumerate().map(|(i, &x)| x / sigma[i / n]).collect(),
        )?)
    }

    /// Records `w / sigma(w)` on a tape with the current estimates.
    pub fn record(&self, tape: &mut Tape<T>, w: NodeId) -> Result<NodeId> {
        let (u, v) = self.vectors();
        tape.spectral_scale(w, self.mode, u, v)
    }
}

fn qsn<T: Scalar>(w: &QWeight<T>, state: &mut SpectralNorm<T>) -> Result<QWeight<T>> {
    state.update(&w.weight)?;
    Ok(QWeight {
        weight: state.normalize(&w.weight)?,
        bias: w.bias.clone(),
    })
}

/// Divides each submatrix by its own spectral norm.
pub fn qsn_split<T: Scalar>(w: &QWeight<T>, state: &mut SpectralNorm<T>) -> Result<QWeight<T>> {
    if state.mode != SnMode::Split {
        return Err(NnError::Config("qsn_split needs a split-mode state".into()));
    }
    qsn(w, state)
}

/// Divides all submatrices by the spectral norm of the whole block matrix.
pub fn qsn_full<T: Scalar>(w: &QWeight<T>, state: &mut SpectralNorm<T>) -> Result<QWeight<T>> {
    if state.mode != SnMode::Full {
        return Err(NnError::Config("qsn_full needs a full-mode state".into()));
    }
    qsn(w, state)
}
