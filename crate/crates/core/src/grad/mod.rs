//! Dense tensors, a reverse-mode tape, Adam, and finite-difference checks.

mod adam;
mod check;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{central_difference, grad_check};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tape::softmax_in_place;
