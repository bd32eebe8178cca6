//! Dense-tensor engine with reverse-mode differentiation, sized to exactly
//! the operation set the projection head needs.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, op_suite, rel_err, OpReport, DEFAULT_STEP};
pub use tape::{Tape, Tensor, TensorId};
