//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! The operator set is deliberately narrow: same-length 1D convolutions and
//! their transposes, batch normalization, a handful of pointwise maps, a
//! ternary spike threshold with a straight-through gradient, and the
//! leaky integrate-and-fire recurrence with a surrogate firing gradient.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AutodiffError, Result};
pub use gradcheck::grad_check;
pub use graph::{ste_forward, BatchNormStats, Gradients, Graph, Pointwise, Var};
pub use tensor::{lit, Real, Tensor};
