//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradChecker};
pub use tape::{huber_value, Primitive, Tape, Var};
