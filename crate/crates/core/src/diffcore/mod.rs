//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass (define-by-run): watch the
//! tensors you want gradients for, compose operations, call
//! [`Tape::backward`] on a scalar loss, then read each watched tensor's
//! gradient. Gradients accumulate across backward calls until `zero_grad`.

mod check;
mod ops;
mod tape;
mod tensor;

pub use check::{analytic_grad, finite_diff_check, numeric_grad};
pub use ops::{mean_cols, pairwise_pnorm, softmax_cross_entropy};
pub use tape::Tape;
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

#[cfg(test)]
mod tests;
