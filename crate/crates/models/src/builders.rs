//! Generator and discriminator construction for both families, in the
//! quaternion domain or as real-valued twins.

use qgan_nn::layers::{quaternion_init, real_init};
use qgan_nn::{Activation, Algebra, ConvConfig, InitCriterion, ParamStore, RunningStats, SnMode, SpectralNorm};
use qgan_quat::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Layer, LinearKind, Model, Role, SpectralEntry};
use crate::spec::{Domain, Family, ModelSpec, NormKind};
use crate::{ModelError, Result};

/// Power-iteration rounds run on every normalized weight at construction,
/// so the first forward pass already uses a converged estimate.
pub const SN_WARMUP_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    /// Upsampling generator block.
    GenUpsample,
    /// Average-pooling discriminator block.
    DiscDownsample,
    /// Discriminator block keeping the spatial size.
    DiscRefine,
}

/// Accumulates parameters, normalization state and spectral state while a
/// model graph is assembled.
pub struct ModelBuilder<T> {
    pub store: ParamStore<T>,
    pub norms: Vec<RunningStats<T>>,
    pub spectral: Vec<SpectralEntry<T>>,
    pub algebra: Algebra,
    /// Normalization applied to every weight registered from now on.
    pub sn: Option<SnMode>,
    pub norm: NormKind,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ModelBuilder<T> {
    pub fn new(algebra: Algebra, norm: NormKind, sn: Option<SnMode>, seed: u64) -> Self {
        ModelBuilder {
            store: ParamStore::new(),
            norms: Vec::new(),
            spectral: Vec::new(),
            algebra,
            sn,
            norm,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn units(&self, alg: Algebra, width: usize, what: &str) -> Result<usize> {
        let k = alg.components();
        if width == 0 || width % k != 0 {
            return Err(ModelError::Input(format!(
                "{what}: width {width} is not a positive multiple of {k}"
            )));
        }
        Ok(width / k)
    }

    /// Dense or convolution layer between real widths `cin` and `cout` in
    /// algebra `alg`. Biases start at zero.
    pub fn linear(
        &mut self,
        name: &str,
        kind: LinearKind,
        alg: Algebra,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> Result<Layer> {
        let (ci, co) = (self.units(alg, cin, name)?, self.units(alg, cout, name)?);
        let (shape, kk) = match kind {
            LinearKind::Dense => (vec![co, ci], 1),
            LinearKind::Conv(c) => (vec![co, ci, c.kernel, c.kernel], c.kernel * c.kernel),
            LinearKind::ConvTranspose(c) => (vec![ci, co, c.kernel, c.kernel], c.kernel * c.kernel),
        };
        let (fan_in, fan_out) = (ci * kk, co * kk);
        let w: Tensor<T> = match alg {
            Algebra::Quaternion => quaternion_init(&shape, fan_in, fan_out, InitCriterion::Glorot, &mut self.rng)?,
            Algebra::Real => real_init(&shape, fan_in, fan_out, InitCriterion::Glorot, &mut self.rng)?,
        };
        let k = alg.components();
        let sn = match self.sn {
            Some(mode) => {
                let mut norm = SpectralNorm::new(mode, w.shape(), self.rng.gen())?;
                norm.set_power_iters(SN_WARMUP_ITERS);
                norm.update(&w)?;
                norm.set_power_iters(1);
                Some(norm)
            }
            None => None,
        };
        let weight = self.store.add(format!("{name}.w"), k, w);
        let sn = sn.map(|norm| {
            self.spectral.push(SpectralEntry { weight, norm });
            self.spectral.len() - 1
        });
        let bias = bias.then(|| self.store.add(format!("{name}.b"), k, Tensor::zeros(&[k, co])));
        Ok(Layer::Linear {
            kind,
            alg,
            weight,
            bias,
            sn,
        })
    }

    /// Batch normalization over `width` real channels: one scale per
    /// channel unit and one shift per component, with running statistics.
    pub fn norm(&mut self, name: &str, alg: Algebra, width: usize) -> Result<Layer> {
        let c = self.units(alg, width, name)?;
        let k = alg.components();
        let gamma = self.store.add(format!("{name}.gamma"), 1, Tensor::full(&[c], T::one()));
        let beta = self.store.add(format!("{name}.beta"), k, Tensor::zeros(&[k, c]));
        self.norms.push(RunningStats::new(k, c));
        Ok(Layer::Norm {
            gamma,
            beta,
            stats: self.norms.len() - 1,
        })
    }

    fn maybe_norm(&mut self, name: &str, width: usize, out: &mut Vec<Layer>) -> Result<()> {
        if self.norm == NormKind::Qbn {
            out.push(self.norm(name, self.algebra, width)?);
        }
        Ok(())
    }

    fn conv(&mut self, name: &str, cfg: ConvConfig, cin: usize, cout: usize) -> Result<Layer> {
        self.linear(name, LinearKind::Conv(cfg), self.algebra, cin, cout, true)
    }

    /// Model over inputs `[1, B, ..input_shape]`.
    pub fn finish(self, role: Role, spec: &ModelSpec, layers: Vec<Layer>, input_shape: Vec<usize>) -> Model<T> {
        self.finish_with_components(role, spec, layers, 1, input_shape)
    }

    pub fn finish_with_components(
        self,
        role: Role,
        spec: &ModelSpec,
        layers: Vec<Layer>,
        input_components: usize,
        input_shape: Vec<usize>,
    ) -> Model<T> {
        Model {
            input_components,
            role,
            spec: spec.clone(),
            store: self.store,
            norms: self.norms,
            spectral: self.spectral,
            layers,
            input_shape,
        }
    }
}

/// Residual block between real widths `cin` and `cout`.
///
/// Generator: `[norm, ReLU, (upsample), conv3]` twice on the main path and
/// `upsample, conv1` on the shortcut. Discriminator: `[ReLU, conv3]` twice
/// followed by average pooling when downsampling; the shortcut is a pooled
/// `conv1`, or the identity when the block keeps both width and size.
pub fn build_qres_block<T: Scalar>(
    b: &mut ModelBuilder<T>,
    name: &str,
    cin: usize,
    cout: usize,
    mode: BlockMode,
) -> Result<Layer> {
    let c3 = ConvConfig::same3();
    let c1 = ConvConfig::pointwise();
    let relu = Layer::Act(Activation::Relu);
    let mut main = Vec::new();
    let mut shortcut = Vec::new();
    match mode {
        BlockMode::GenUpsample => {
            b.maybe_norm(&format!("{name}.bn1"), cin, &mut main)?;
            main.push(relu.clone());
            main.push(Layer::Upsample(2));
            main.push(b.conv(&format!("{name}.conv1"), c3, cin, cout)?);
            b.maybe_norm(&format!("{name}.bn2"), cout, &mut main)?;
            main.push(relu);
            main.push(b.conv(&format!("{name}.conv2"), c3, cout, cout)?);
            shortcut.push(Layer::Upsample(2));
            shortcut.push(b.conv(&format!("{name}.shortcut"), c1, cin, cout)?);
        }
        BlockMode::DiscDownsample | BlockMode::DiscRefine => {
            main.push(relu.clone());
            main.push(b.conv(&format!("{name}.conv1"), c3, cin, cin)?);
            main.push(relu);
            main.push(b.conv(&format!("{name}.conv2"), c3, cin, cout)?);
            let down = mode == BlockMode::DiscDownsample;
            if down {
                main.push(Layer::AvgPool(2));
            }
            if down || cin != cout {
                shortcut.push(b.conv(&format!("{name}.shortcut"), c1, cin, cout)?);
                if down {
                    shortcut.push(Layer::AvgPool(2));
                }
            }
        }
    }
    Ok(Layer::Residual { main, shortcut })
}

/// First discriminator block: `conv3, ReLU, conv3, pool` on the main path
/// and `conv1, pool` on the shortcut, with no activation before the first
/// convolution.
pub fn build_first_qres_block<T: Scalar>(
    b: &mut ModelBuilder<T>,
    name: &str,
    cin: usize,
    filters: usize,
) -> Result<Layer> {
    let c3 = ConvConfig::same3();
    let main = vec![
        b.conv(&format!("{name}.conv1"), c3, cin, filters)?,
        Layer::Act(Activation::Relu),
        b.conv(&format!("{name}.conv2"), c3, filters, filters)?,
        Layer::AvgPool(2),
    ];
    let shortcut = vec![
        b.conv(&format!("{name}.shortcut"), ConvConfig::pointwise(), cin, filters)?,
        Layer::AvgPool(2),
    ];
    Ok(Layer::Residual { main, shortcut })
}

/// Moves the four image channels into one quaternion channel for
/// quaternion models; images enter and leave every model as `[1, B, 4, H, W]`.
fn image_in(domain: Domain) -> Vec<Layer> {
    match domain {
        Domain::Quaternion => vec![Layer::ToQuaternion],
        Domain::Real => vec![],
    }
}

fn image_out(domain: Domain) -> Vec<Layer> {
    match domain {
        Domain::Quaternion => vec![Layer::ToReal],
        Domain::Real => vec![],
    }
}

fn check_family(spec: &ModelSpec, family: Family) -> Result<()> {
    spec.validate()?;
    if spec.family != family {
        return Err(ModelError::InvalidSpec {
            spec: spec.name.clone(),
            violated: format!("expected a {family:?} spec, got {:?}", spec.family),
        });
    }
    Ok(())
}

fn image_shape(spec: &ModelSpec) -> Vec<usize> {
    vec![spec.image_channels, spec.image_size, spec.image_size]
}

fn sngan_generator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let alg = spec.domain.algebra();
    let mut b = ModelBuilder::new(alg, spec.norm, None, seed);
    let (f0, s) = (spec.g_filters[0], spec.base_spatial);
    let mut layers = vec![
        b.linear(
            "g.fc",
            LinearKind::Dense,
            Algebra::Real,
            spec.noise_dim,
            f0 * s * s,
            true,
        )?,
        Layer::Reshape(vec![f0, s, s]),
    ];
    if spec.domain == Domain::Quaternion {
        layers.push(Layer::ToQuaternion);
    }
    for (i, w) in spec.g_filters.windows(2).enumerate() {
        layers.push(build_qres_block(
            &mut b,
            &format!("g.block{}", i + 1),
            w[0],
            w[1],
            BlockMode::GenUpsample,
        )?);
    }
    let last = *spec.g_filters.last().unwrap_or(&f0);
    b.maybe_norm("g.bn", last, &mut layers)?;
    layers.push(Layer::Act(Activation::Relu));
    layers.push(b.conv("g.conv", ConvConfig::same3(), last, spec.image_channels)?);
    layers.push(Layer::Act(Activation::Tanh));
    layers.extend(image_out(spec.domain));
    Ok(b.finish(Role::Generator, spec, layers, vec![spec.noise_dim]))
}

fn sngan_discriminator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let alg = spec.domain.algebra();
    let mut b = ModelBuilder::new(alg, NormKind::None, spec.sn.mode(), seed);
    let mut layers = image_in(spec.domain);
    let mut cin = spec.d_filters[0];
    layers.push(build_first_qres_block(&mut b, "d.block1", spec.image_channels, cin)?);
    for (i, (&f, &down)) in spec.d_filters.iter().zip(&spec.d_downsample).enumerate().skip(1) {
        let mode = if down {
            BlockMode::DiscDownsample
        } else {
            BlockMode::DiscRefine
        };
        layers.push(build_qres_block(&mut b, &format!("d.block{}", i + 1), cin, f, mode)?);
        cin = f;
    }
    layers.push(Layer::Act(Activation::Relu));
    layers.push(Layer::GlobalSumPool);
    layers.push(b.linear("d.fc", LinearKind::Dense, alg, cin, alg.components(), true)?);
    layers.push(Layer::SumComponents);
    Ok(b.finish(Role::Discriminator, spec, layers, image_shape(spec)))
}

fn dcgan_generator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let alg = spec.domain.algebra();
    let mut b = ModelBuilder::new(alg, spec.norm, None, seed);
    let (f0, s) = (spec.g_filters[0], spec.base_spatial);
    let mut layers = Vec::new();
    if spec.domain == Domain::Quaternion {
        layers.push(Layer::ToQuaternion);
    }
    let k = alg.components();
    layers.push(b.linear("g.fc", LinearKind::Dense, alg, spec.noise_dim, f0 * s * s, true)?);
    layers.push(Layer::Reshape(vec![f0 / k, s, s]));
    b.maybe_norm("g.bn0", f0, &mut layers)?;
    layers.push(Layer::Act(Activation::Relu));
    let up = ConvConfig::new(4, 2, 1)?;
    let widths: Vec<usize> = spec.g_filters.iter().copied().chain([spec.image_channels]).collect();
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(b.linear(
            &format!("g.convt{}", i + 1),
            LinearKind::ConvTranspose(up),
            alg,
            w[0],
            w[1],
            true,
        )?);
        if i + 2 < widths.len() {
            b.maybe_norm(&format!("g.bn{}", i + 1), w[1], &mut layers)?;
            layers.push(Layer::Act(Activation::Relu));
        }
    }
    layers.push(Layer::Act(Activation::Tanh));
    layers.extend(image_out(spec.domain));
    Ok(b.finish(Role::Generator, spec, layers, vec![spec.noise_dim]))
}

fn dcgan_discriminator<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let alg = spec.domain.algebra();
    let mut b = ModelBuilder::new(alg, spec.norm, spec.sn.mode(), seed);
    let mut layers = image_in(spec.domain);
    let down = ConvConfig::new(4, 2, 1)?;
    let mut cin = spec.image_channels;
    for (i, &f) in spec.d_filters.iter().enumerate() {
        layers.push(b.linear(&format!("d.conv{}", i + 1), LinearKind::Conv(down), alg, cin, f, true)?);
        if i > 0 {
            b.maybe_norm(&format!("d.bn{}", i + 1), f, &mut layers)?;
        }
        layers.push(Layer::Act(Activation::LeakyRelu(0.2)));
        cin = f;
    }
    let s = spec.image_size >> spec.d_filters.len();
    let k = alg.components();
    layers.push(Layer::Reshape(vec![cin / k * s * s]));
    layers.push(b.linear("d.fc", LinearKind::Dense, alg, cin * s * s, k, true)?);
    layers.push(Layer::Act(Activation::Sigmoid));
    Ok(b.finish(Role::Discriminator, spec, layers, image_shape(spec)))
}

/// Generator and discriminator of a convolutional spec. The discriminator
/// emits one sigmoid quaternion per sample (four probabilities for the
/// real twin).
pub fn build_qdcgan<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Model<T>, Model<T>)> {
    check_family(spec, Family::Dcgan)?;
    Ok((
        dcgan_generator(spec, seed)?,
        dcgan_discriminator(spec, seed.wrapping_add(1))?,
    ))
}

/// Generator and critic of a residual spec. The critic emits one raw real
/// score per sample: the component sum of its final dense output.
pub fn build_qsngan<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Model<T>, Model<T>)> {
    check_family(spec, Family::Sngan)?;
    Ok((
        sngan_generator(spec, seed)?,
        sngan_discriminator(spec, seed.wrapping_add(1))?,
    ))
}

/// Builds either family from its spec.
pub fn build_gan<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Model<T>, Model<T>)> {
    match spec.family {
        Family::Dcgan => build_qdcgan(spec, seed),
        Family::Sngan => build_qsngan(spec, seed),
    }
}

/// The same topology with real layers of equal real widths.
pub fn build_real_twin<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Model<T>, Model<T>)> {
    build_gan(&spec.with_domain(Domain::Real), seed)
}
