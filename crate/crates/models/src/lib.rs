//! Adversarial losses, the residual and convolutional quaternion GAN
//! architectures, their real-valued twins, and parameter accounting.

pub mod builders;
pub mod error;
pub mod losses;
pub mod model;
pub mod spec;

pub use builders::{
    build_first_qres_block, build_gan, build_qdcgan, build_qres_block, build_qsngan, build_real_twin, BlockMode,
    ModelBuilder,
};
pub use error::ModelError;
pub use losses::{gan_loss, hinge_losses, quaternion_cross_entropy, wgan_gp_loss, LossKind};
pub use model::{Layer, LinearKind, Model, Role, SigmaMonitor, SigmaReport, SpectralEntry};
pub use spec::{Domain, Family, ModelSpec, NormKind, SnKind};

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Trainable real scalars of a model.
pub fn count_parameters<T: qgan_quat::Scalar>(m: &Model<T>) -> usize {
    m.count_parameters()
}
