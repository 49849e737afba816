use qgan_nn::{Algebra, SnMode};
use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Transposed-convolution generator, strided-convolution discriminator
    /// with a sigmoid decision.
    Dcgan,
    /// Residual generator and spectrally normalized residual critic.
    Sngan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Quaternion,
    /// Real-valued twin with the same real channel widths.
    Real,
}

impl Domain {
    pub fn algebra(self) -> Algebra {
        match self {
            Domain::Quaternion => Algebra::Quaternion,
            Domain::Real => Algebra::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Qbn,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnKind {
    None,
    Split,
    Full,
}

impl SnKind {
    pub fn mode(self) -> Option<SnMode> {
        match self {
            SnKind::None => None,
            SnKind::Split => Some(SnMode::Split),
            SnKind::Full => Some(SnMode::Full),
        }
    }
}

/// Architecture of a generator/discriminator pair. Widths count real
/// channels, so a quaternion layer of width `f` has `f / 4` quaternion
/// channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    pub domain: Domain,
    pub noise_dim: usize,
    /// Spatial size produced by the generator's first layer.
    pub base_spatial: usize,
    /// Generator widths: the first layer's output, then one entry per
    /// upsampling stage.
    pub g_filters: Vec<usize>,
    /// Discriminator widths, one entry per block or convolution stage.
    pub d_filters: Vec<usize>,
    /// Whether each discriminator stage halves the spatial size.
    pub d_downsample: Vec<bool>,
    pub image_size: usize,
    /// Real channels per image; 4 is one quaternion channel.
    pub image_channels: usize,
    pub norm: NormKind,
    pub sn: SnKind,
}

impl ModelSpec {
    /// Number of spatial doublings in the generator.
    pub fn g_stages(&self) -> usize {
        match self.family {
            Family::Sngan => self.g_filters.len().saturating_sub(1),
            Family::Dcgan => self.g_filters.len(),
        }
    }

    pub fn with_domain(&self, domain: Domain) -> Self {
        ModelSpec { domain, ..self.clone() }
    }

    pub fn with_sn(&self, sn: SnKind) -> Self {
        ModelSpec { sn, ..self.clone() }
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |violated: String| {
            Err(ModelError::InvalidSpec {
                spec: self.name.clone(),
                violated,
            })
        };
        if self.image_channels != 4 {
            return fail(format!(
                "image_channels must be 4 (one quaternion channel), got {}",
                self.image_channels
            ));
        }
        if self.noise_dim == 0 || self.base_spatial == 0 || self.image_size == 0 {
            return fail("noise_dim, base_spatial and image_size must be positive".into());
        }
        if self.g_filters.is_empty() || self.d_filters.is_empty() {
            return fail("filter schedules must be non-empty".into());
        }
        if let Some(&f) = self.g_filters.iter().chain(&self.d_filters).find(|&&f| f == 0) {
            return fail(format!("filter width {f} must be positive"));
        }
        if self.domain == Domain::Quaternion {
            if let Some(&f) = self.g_filters.iter().chain(&self.d_filters).find(|&&f| f % 4 != 0) {
                return fail(format!("filter width {f} is not divisible by 4"));
            }
            if self.family == Family::Dcgan && self.noise_dim % 4 != 0 {
                return fail(format!("noise_dim {} is not divisible by 4", self.noise_dim));
            }
        }
        let reached = self.base_spatial << self.g_stages();
        if reached != self.image_size {
            return fail(format!(
                "image_size {} is not reachable: base {} doubled {} times gives {reached}",
                self.image_size,
                self.base_spatial,
                self.g_stages()
            ));
        }
        let downs = match self.family {
            Family::Sngan => {
                if self.d_downsample.len() != self.d_filters.len() {
                    return fail(format!(
                        "d_downsample has {} entries for {} discriminator blocks",
                        self.d_downsample.len(),
                        self.d_filters.len()
                    ));
                }
                if !self.d_downsample[0] {
                    return fail("the first discriminator block must downsample".into());
                }
                self.d_downsample.iter().filter(|&&d| d).count()
            }
            Family::Dcgan => self.d_filters.len(),
        };
        if self.image_size % (1 << downs) != 0 {
            return fail(format!("image_size {} is not divisible by 2^{downs}", self.image_size));
        }
        Ok(())
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "qsngan-128",
            "qsngan-stl",
            "qsngan-cifar",
            "qsngan-toy",
            "qdcgan-32",
            "qdcgan-toy",
        ]
    }

    /// Named architectures: the 128x128 residual model, its two smaller
    /// variants, a 16x16 toy, and two convolutional models.
    pub fn preset(name: &str) -> Result<Self> {
        let sngan = |base: usize, g: &[usize], d: &[usize], down: &[bool], size: usize| ModelSpec {
            name: name.to_string(),
            family: Family::Sngan,
            domain: Domain::Quaternion,
            noise_dim: 128,
            base_spatial: base,
            g_filters: g.to_vec(),
            d_filters: d.to_vec(),
            d_downsample: down.to_vec(),
            image_size: size,
            image_channels: 4,
            norm: NormKind::Qbn,
            sn: SnKind::Full,
        };
        let dcgan = |noise: usize, g: &[usize], d: &[usize], size: usize| ModelSpec {
            name: name.to_string(),
            family: Family::Dcgan,
            domain: Domain::Quaternion,
            noise_dim: noise,
            base_spatial: size >> g.len(),
            g_filters: g.to_vec(),
            d_filters: d.to_vec(),
            d_downsample: vec![true; d.len()],
            image_size: size,
            image_channels: 4,
            norm: NormKind::Qbn,
            sn: SnKind::None,
        };
        let spec = match name {
            "qsngan-128" => sngan(
                4,
                &[1024, 1024, 512, 256, 128, 64],
                &[64, 128, 256, 512, 1024, 1024],
                &[true, true, true, true, true, false],
                128,
            ),
            "qsngan-stl" => sngan(
                6,
                &[512, 256, 128, 64],
                &[64, 128, 256, 512, 1024],
                &[true, true, true, true, false],
                48,
            ),
            "qsngan-cifar" => sngan(
                4,
                &[256, 256, 256, 256],
                &[128, 128, 128, 128],
                &[true, true, false, false],
                32,
            ),
            "qsngan-toy" => sngan(4, &[16, 16, 16], &[16, 16, 16], &[true, true, false], 16),
            "qdcgan-32" => dcgan(128, &[256, 128, 64], &[64, 128, 256], 32),
            "qdcgan-toy" => dcgan(16, &[16, 8], &[8, 16], 8),
            _ => return Err(ModelError::UnknownPreset(name.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }
}
