//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Tensors are row-major and mostly rank 2. Broadcasting is limited to
//! adding a bias vector to every row; all other binary operations require
//! identical shapes. Dropout is multiplication by a caller-supplied mask, so
//! the mask sampling policy lives entirely outside this crate.

mod error;
mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use error::{AdError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
