//! Dense `f64` tensors, a closed set of differentiable ops recorded on a
//! tape, and a central-difference gradient checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, rel_error, GradCheckReport, ABS_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{layer_norm, log_softmax_rows, log_sum_exp, matmul, softmax, transpose, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
