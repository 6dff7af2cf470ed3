//! Dense tensors, a reverse-mode tape, the Adam optimiser and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP, KINK_MARGIN, REL_FLOOR};
pub use tape::{CustomBackward, KinkTrace, Tape, Var, NORM_EPS};
pub use tensor::{ParamKey, Parameterized, Tensor};

#[cfg(test)]
mod tests;
