//! Small reverse-mode autodiff substrate used by the learned reconstructors.
//!
//! Complex matrices are stored as real tensors of shape `[rows, cols, 2]`,
//! and every gradient is taken with respect to the real and imaginary parts.

mod adam;
mod checkpoint;
mod gradcheck;
mod linalg;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_params, save_params, ParamSet};
pub use gradcheck::gradient_check;
pub use linalg::{gemm, Trans};
pub use tape::{Gradients, PiecewiseGeometry, Tape, Var};
pub use tensor::{cmatrix_to_tensor, tensor_to_cmatrix, Tensor};

#[cfg(test)]
mod tests;
