//! Quaternion algebra substrate.
//!
//! [`Quaternion`] is the hypercomplex scalar `q0 + q1 i + q2 j + q3 k`;
//! [`QTensor`] batches quaternions with component-major storage (four
//! equally shaped real arrays laid out back to back) and [`Tensor`] is the
//! plain real n-d array the autodiff tape moves around. A quaternion tensor
//! of shape `[b, c, h, w]` is bit-for-bit the real tensor `[4, b, c, h, w]`.

mod error;
mod qtensor;
mod quaternion;
mod scalar;
mod tensor;

pub use error::QuatError;
pub use qtensor::QTensor;
pub use quaternion::{Polar, Quaternion};
pub use scalar::{gemm, MatRef, Scalar};
pub use tensor::Tensor;

pub type Result<T, E = QuatError> = std::result::Result<T, E>;
