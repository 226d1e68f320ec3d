//! Dense-tensor reverse-mode differentiation.
//!
//! The engine is deliberately small: the primitive set covers the drift
//! network (matmul, row broadcast, layer normalization, relu), the unrolled
//! Euler–Maruyama recursion and the estimator formulas (trigonometric
//! features, squares, sums, pairwise distances).

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, grad_check};
pub(crate) use tape::sigmoid;
pub use tape::{Gradients, OpKind, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
