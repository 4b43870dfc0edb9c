//! Reverse-mode differentiation over a recorded tape of tensor operations.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use ops::concat;
pub use tape::{Gradients, Tape, Var};
