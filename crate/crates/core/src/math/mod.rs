//! Dense matrices, differentiable primitives with hand-written reverse rules,
//! and the finite-difference gradient oracle.
//!
//! Every model in this crate composes these primitives explicitly; there is
//! no tape or graph. All reductions accumulate in ascending index order so a
//! given input always produces the same bits.

mod gradcheck;
pub(crate) mod matrix;
pub mod ops;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheck, REL_ERR_FLOOR};
pub use matrix::Matrix;
pub use ops::Axis;
pub use scalar::Real;
pub use tensor::{NamedTensor, Parameters};
