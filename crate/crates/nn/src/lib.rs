//! Reverse-mode autodiff over component-major tensors, quaternion layers,
//! normalization and the Adam optimizer.
//!
//! Every activation is a real [`Tensor`](qgan_quat::Tensor) whose leading
//! axis holds the algebra components: `[1, ...]` for real layers and
//! `[4, ...]` for quaternion layers, so one tape serves both a quaternion
//! network and its real-valued twin.

pub mod algebra;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod norm;
pub mod optim;
pub mod params;

pub use algebra::{Algebra, Term};
pub use autodiff::{Activation, Gradients, NodeId, Op, PoolKind, SnMode, Tape};
pub use error::NnError;
pub use gradcheck::{grad_check, grad_check_smooth, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use layers::{ConvConfig, InitCriterion, PhiRange, QWeight};
pub use norm::{BnMode, QBNState, RunningStats, SnState, SpectralNorm};
pub use optim::{AdamConfig, AdamState};
pub use params::{Param, ParamId, ParamStore};

pub type Result<T, E = NnError> = std::result::Result<T, E>;
