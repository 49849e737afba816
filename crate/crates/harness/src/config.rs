use std::fs;
use std::path::Path;

use qgan_models::{Domain, Family, LossKind, ModelSpec, SnKind};
use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::metrics::ExtractorKind;
use crate::{HarnessError, Result};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "QGAN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// Directory of PPM/PNG images or a packed dataset file.
    Path(String),
}

/// One training run. Every field is required in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Architecture preset name.
    pub spec: String,
    pub domain: Domain,
    pub data: DataSource,
    pub batch_size: usize,
    /// Generator updates.
    pub iterations: u64,
    /// Discriminator updates per generator update.
    pub critic_iters: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub sn_mode: SnKind,
    pub loss: LossKind,
    /// Generator updates between checkpoints and sample grids; 0 disables.
    pub checkpoint_every: u64,
    /// Generator updates between Fréchet evaluations; 0 disables.
    pub eval_every: u64,
    /// Generated and reference images per evaluation.
    pub eval_generated: usize,
    pub eval_reference: usize,
    pub extractor: ExtractorKind,
    /// Directory for checkpoints and samples; `null` keeps the run in memory.
    pub out_dir: Option<String>,
}

impl TrainConfig {
    /// A small synthetic run of the 16x16 residual toy model with hinge loss
    /// and full quaternion spectral normalization.
    pub fn toy() -> Self {
        TrainConfig {
            spec: "qsngan-toy".into(),
            domain: Domain::Quaternion,
            data: DataSource::Synthetic(SynthSpec {
                n: 512,
                size: 16,
                seed: 7,
            }),
            batch_size: 32,
            iterations: 200,
            critic_iters: 1,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            seed: 1,
            sn_mode: SnKind::Full,
            loss: LossKind::Hinge,
            checkpoint_every: 0,
            eval_every: 0,
            eval_generated: 256,
            eval_reference: 256,
            extractor: ExtractorKind::Pixels,
            out_dir: None,
        }
    }

    /// The architecture with this run's domain and spectral normalization.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::preset(&self.spec)?
            .with_domain(self.domain)
            .with_sn(self.sn_mode))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.critic_iters < 1 {
            return fail("critic_iters must be at least 1".into());
        }
        if self.batch_size < 2 {
            return fail(format!(
                "batch_size must be at least 2 for batch statistics, got {}",
                self.batch_size
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!(
                "invalid optimizer settings lr={} beta1={} beta2={}",
                self.lr, self.beta1, self.beta2
            ));
        }
        if self.eval_every > 0 && (self.eval_generated < 2 || self.eval_reference < 2) {
            return fail("evaluation needs at least 2 generated and 2 reference images".into());
        }
        let spec = self.model_spec()?;
        match (spec.family, self.loss) {
            (_, LossKind::WganGp { lambda }) if !(lambda >= 0.0) => {
                return fail(format!("lambda {lambda} is negative"))
            }
            (Family::Dcgan, LossKind::Qce) | (Family::Sngan, _) => {}
            (family, loss) => {
                return fail(format!(
                    "loss {loss:?} needs raw scores, but {family:?} emits probabilities"
                ))
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.size != spec.image_size {
                return fail(format!(
                    "synthetic size {} differs from model image size {}",
                    s.size, spec.image_size
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?)
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v} is not a u64")))?;
        }
        Ok(())
    }
}
