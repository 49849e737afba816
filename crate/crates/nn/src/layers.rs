//! Quaternion layers as stateless functions of `(input, weights)`, plus the
//! polar-form weight initializer.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use qgan_quat::{Scalar, Tensor};

use crate::algebra::Algebra;
use crate::autodiff::{Activation, Op, PoolKind, Tape};
use crate::{NnError, Result};

/// Kernel geometry of a 2-D (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvConfig {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "kernel {kernel} and stride {stride} must be >= 1"
            )));
        }
        Ok(ConvConfig {
            kernel,
            stride,
            padding,
        })
    }

    /// 3x3, stride 1, padding 1.
    pub const fn same3() -> Self {
        ConvConfig {
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    /// 1x1, stride 1, no padding.
    pub const fn pointwise() -> Self {
        ConvConfig {
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn output_size(&self, n: usize) -> Option<usize> {
        (n + 2 * self.padding)
            .checked_sub(self.kernel)
            .map(|v| v / self.stride + 1)
    }

    pub fn transposed_output_size(&self, n: usize) -> Option<usize> {
        if n == 0 {
            return None;
        }
        ((n - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.padding)
            .filter(|&v| v > 0)
    }
}

/// Weights of a quaternion layer: the four shared submatrices stacked on the
/// leading axis, `[4, out_q, in_q, (k, k)]`, and an optional quaternion bias
/// `[4, out_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QWeight<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> QWeight<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() < 3 || ws[0] != 4 {
            return Err(NnError::Config(format!(
                "quaternion weight needs shape [4,out,in,..], got {ws:?}"
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [4, ws[1]] {
                return Err(NnError::Config(format!(
                    "bias {:?} does not match weight {ws:?}",
                    b.shape()
                )));
            }
        }
        Ok(QWeight { weight, bias })
    }

    /// Build from the four submatrices `W0..W3`, each of shape `sub_shape`.
    pub fn from_submatrices(sub_shape: &[usize], subs: [Vec<T>; 4], bias: Option<Tensor<T>>) -> Result<Self> {
        let mut shape = vec![4];
        shape.extend_from_slice(sub_shape);
        let data: Vec<T> = subs.into_iter().flatten().collect();
        Self::new(Tensor::from_vec(&shape, data)?, bias)
    }

    /// Dense weight with `W0 = I` and the imaginary parts zero.
    pub fn identity_dense(n_q: usize) -> Self {
        let mut w = Tensor::zeros(&[4, n_q, n_q]);
        for i in 0..n_q {
            w.data_mut()[i * n_q + i] = T::one();
        }
        QWeight { weight: w, bias: None }
    }

    /// Pointwise convolution weight with `W0 = I`.
    pub fn identity_conv1x1(n_q: usize) -> Self {
        let w = Self::identity_dense(n_q).weight;
        QWeight {
            weight: w.reshape(&[4, n_q, n_q, 1, 1]).expect("same element count"),
            bias: None,
        }
    }

    pub fn out_q(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn in_q(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Component `c` of the weight as a flat row-major slice.
    pub fn submatrix(&self, c: usize) -> &[T] {
        let n = self.weight.numel() / 4;
        &self.weight.data()[c * n..][..n]
    }

    /// Trainable real scalars, bias included.
    pub fn real_parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, |b| b.numel())
    }
}

fn eval<T: Scalar>(op: Op<T>, inputs: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let ids: Vec<_> = inputs.into_iter().map(|t| tape.constant(t)).collect();
    let y = tape.record(op, &ids)?;
    Ok(tape.value(y).clone())
}

fn linear_inputs<T: Scalar>(x: &Tensor<T>, w: &QWeight<T>) -> Vec<Tensor<T>> {
    let mut v = vec![x.clone(), w.weight.clone()];
    v.extend(w.bias.clone());
    v
}

/// `x [4, B, in_q]` -> `[4, B, out_q]` via the Hamilton product with `w`.
pub fn qdense_forward<T: Scalar>(x: &Tensor<T>, w: &QWeight<T>) -> Result<Tensor<T>> {
    eval(
        Op::Dense {
            alg: Algebra::Quaternion,
        },
        linear_inputs(x, w),
    )
}

/// `x [4, B, in_q, H, W]` -> `[4, B, out_q, H', W']`.
pub fn qconv2d_forward<T: Scalar>(x: &Tensor<T>, w: &QWeight<T>, cfg: ConvConfig) -> Result<Tensor<T>> {
    eval(
        Op::Conv {
            alg: Algebra::Quaternion,
            cfg,
        },
        linear_inputs(x, w),
    )
}

/// `x [4, B, in_q, H, W]` with `w [4, in_q, out_q, k, k]` ->
/// `[4, B, out_q, (H-1)s - 2p + k, ..]`.
pub fn qtransposed_conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &QWeight<T>, cfg: ConvConfig) -> Result<Tensor<T>> {
    eval(
        Op::ConvTranspose {
            alg: Algebra::Quaternion,
            cfg,
        },
        linear_inputs(x, w),
    )
}

pub fn split_activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| T::from_f64(kind.apply(Scalar::to_f64(v))))
}

/// Per-component average or sum pooling with a window dividing `H` and `W`.
pub fn split_pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind, window: usize) -> Result<Tensor<T>> {
    eval(Op::Pool { kind, window }, vec![x.clone()])
}

pub fn global_sum_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    eval(Op::GlobalSumPool, vec![x.clone()])
}

/// Max pooling that keeps, per window, the whole quaternion of largest
/// amplitude.
pub fn guided_max_pool<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    eval(Op::GuidedMaxPool { window }, vec![x.clone()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitCriterion {
    Glorot,
    He,
}

impl InitCriterion {
    /// Per-component standard deviation for quaternion weights.
    pub fn quaternion_sigma(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitCriterion::Glorot => 1.0 / (2.0 * (fan_in + fan_out) as f64).sqrt(),
            InitCriterion::He => 1.0 / (2.0 * fan_in as f64).sqrt(),
        }
    }

    /// Standard deviation for real weights.
    pub fn real_sigma(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitCriterion::Glorot => (2.0 / (fan_in + fan_out) as f64).sqrt(),
            InitCriterion::He => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

fn check_fans(fan_in: usize, fan_out: usize) -> Result<()> {
    if fan_in == 0 || fan_out == 0 {
        return Err(NnError::Config(format!(
            "fans must be positive, got {fan_in}/{fan_out}"
        )));
    }
    Ok(())
}

/// Range of the magnitude draw `phi ~ U[-r, r]` in [`quaternion_init_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PhiRange {
    /// `r = sigma`. Gives `E|W|^2 = sigma^2 / 3`.
    Sigma,
    /// `r = 2 sqrt(3) sigma`, so that `E|W|^2 = 4 sigma^2`.
    #[default]
    VarianceMatched,
}

impl PhiRange {
    pub fn radius(self, sigma: f64) -> f64 {
        match self {
            PhiRange::Sigma => sigma,
            PhiRange::VarianceMatched => 2.0 * 3f64.sqrt() * sigma,
        }
    }
}

/// Polar-form quaternion initialization of a weight of `shape` (without the
/// component axis). Every entry gets `phi (cos theta + u sin theta)` with `u`
/// a random unit pure quaternion, `theta ~ U[-pi, pi]` and `phi` uniform
/// around zero, scaled so that `Var{W} = E|W|^2 = 4 sigma^2`.
pub fn quaternion_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    criterion: InitCriterion,
    rng: &mut R,
) -> Result<Tensor<T>> {
    quaternion_init_with(shape, fan_in, fan_out, criterion, PhiRange::default(), rng)
}

pub fn quaternion_init_with<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    criterion: InitCriterion,
    phi_range: PhiRange,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_fans(fan_in, fan_out)?;
    let r = phi_range.radius(criterion.quaternion_sigma(fan_in, fan_out));
    let n: usize = shape.iter().product();
    let unit = Uniform::new(0.0f64, 1.0);
    let angle = Uniform::new_inclusive(-std::f64::consts::PI, std::f64::consts::PI);
    let mag = Uniform::new_inclusive(-r, r);
    let mut data = vec![T::zero(); 4 * n];
    for i in 0..n {
        let u = loop {
            let u = [unit.sample(rng), unit.sample(rng), unit.sample(rng)];
            let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if norm > 0.0 {
                break [u[0] / norm, u[1] / norm, u[2] / norm];
            }
        };
        let theta = angle.sample(rng);
        let phi = mag.sample(rng);
        let (s, c) = theta.sin_cos();
        data[i] = T::from_f64(phi * c);
        for k in 0..3 {
            data[(k + 1) * n + i] = T::from_f64(phi * u[k] * s);
        }
    }
    let mut full = vec![4];
    full.extend_from_slice(shape);
    Ok(Tensor::from_vec(&full, data)?)
}

/// [`quaternion_init`] from a fixed seed.
pub fn quaternion_init_seeded<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    criterion: InitCriterion,
    seed: u64,
) -> Result<QWeight<T>> {
    let w = quaternion_init(shape, fan_in, fan_out, criterion, &mut ChaCha8Rng::seed_from_u64(seed))?;
    QWeight::new(w, None)
}

/// Zero-mean normal initialization for real-valued weights `[1, ..shape]`.
pub fn real_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    criterion: InitCriterion,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_fans(fan_in, fan_out)?;
    let normal = Normal::new(0.0, criterion.real_sigma(fan_in, fan_out)).map_err(|e| NnError::Config(e.to_string()))?;
    let mut full = vec![1];
    full.extend_from_slice(shape);
    Ok(Tensor::from_fn(&full, |_| T::from_f64(normal.sample(rng))))
}
