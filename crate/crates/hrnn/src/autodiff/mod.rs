//! Minimal reverse-mode automatic differentiation over dense tensors, with an
//! explicit gradient-barrier primitive and a finite-difference oracle.

mod fd;
mod tape;
mod tensor;

pub use fd::{finite_diff_check, max_rel_err, rel_err};
pub use tape::{Gradients, Tape};
pub use tensor::{NodeId, Tensor};
