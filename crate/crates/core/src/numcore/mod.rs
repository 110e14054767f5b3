//! Dense `f64` tensors with reverse-mode gradients.
//!
//! Only the operations the normalization pipeline composes are provided:
//! batched matrix products, softmax, broadcasting elementwise arithmetic,
//! segment pooling and its broadcast inverse, cross entropy and pairwise
//! squared distances.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, slice, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{Tape, Value};
pub use tensor::{broadcast_shape, Tensor};

#[cfg(test)]
mod tests;
