use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuatError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("non-invertible: zero quaternion")]
    NonInvertible,
    #[error("polar form undefined for the zero quaternion")]
    ZeroQuaternion,
    #[error("axis must be a pure unit quaternion, got ({0}, {1}, {2}, {3})")]
    NotPureUnit(f64, f64, f64, f64),
    #[error("expected a pure quaternion, scalar part is {0}")]
    NotPure(f64),
    #[error("tensor with leading axis {0} is not a quaternion tensor (need 4)")]
    NotQuaternionLayout(usize),
}
