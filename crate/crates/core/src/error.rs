use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { primitive: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid array: shape {shape:?} does not hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("step {step} outside curriculum of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}
