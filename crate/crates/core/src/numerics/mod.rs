//! Dense `f64` tensors and a define-by-run reverse-mode tape.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{dot, logsumexp, sigmoid, softmax_row};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: empty axis")]
    Empty { op: &'static str },
}
