//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor) values.

pub mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, DEFAULT_STEP};
pub use ops::Elementwise;
pub use tape::{Broadcast, CustomBackward, Tape, Var};
