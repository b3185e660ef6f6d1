//! Dense tensors with reverse-mode automatic differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{
    analytic_gradient, finite_difference_check, max_relative_error, numeric_gradient,
};
pub use tape::{smooth_l1_scalar, BatchStats, Gradients, Tape, TensorId};
pub use tensor::Tensor;
