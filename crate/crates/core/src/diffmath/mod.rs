//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! All network math in this crate runs through [`Tape`]: forward primitives
//! are recorded as they execute and a single reverse sweep yields gradients
//! for every parameter leaf. Everything is `f64`.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

/// Additive floor applied to every variance head in the crate.
pub const VARIANCE_FLOOR: f64 = 1e-5;
