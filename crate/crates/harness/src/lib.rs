//! Data ingestion, quaternion image encapsulation, the GAN training loop,
//! checkpoints and evaluation metrics.
//!
//! Fréchet distances computed here use the built-in feature extractors
//! (or a user-supplied [`metrics::FeatureExtractor`]), not Inception
//! embeddings. Values are comparable between runs that share an extractor
//! and are not comparable to published FID numbers.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{DataSource, TrainConfig};
pub use data::{synth_dataset, Dataset, SynthSpec};
pub use error::HarnessError;
pub use metrics::{ExtractorKind, FeatureExtractor};
pub use train::{emit_samples, generator_from_checkpoint, qsn_ablation, RunReport, SampleReport, StepLog, Trainer};

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
