//! Dense tensors, a reverse-mode tape, Adam, and gradient checking.

mod adam;
mod gradcheck;
pub mod interp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_check, gradient_check, GradCheckReport};
pub use tape::{backprop, Gradients, NodeId, Tape};
pub use tensor::{affine_forward, Tensor};
