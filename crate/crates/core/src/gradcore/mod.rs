//! Reverse-mode differentiation over dense `f64` tensors, an Adam
//! optimizer, and a finite-difference gradient oracle.

mod adam;
mod fd;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use fd::finite_difference_gradient;
pub use tape::{matmul_raw, Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{prim}: shape mismatch: {detail}")]
    ShapeMismatch { prim: &'static str, detail: String },
    #[error("{prim}: {detail}")]
    Domain { prim: &'static str, detail: String },
    #[error("{prim} produced a non-finite value")]
    NonFinite { prim: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter index {index}")]
    NonFiniteGrad { index: usize },
}
