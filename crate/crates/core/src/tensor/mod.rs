//! Reverse-mode automatic differentiation over dense tensors.

mod array;
mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use array::Tensor;
pub use gradcheck::{GradCheck, GradCheckReport, KINK_TOLERANCE};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
