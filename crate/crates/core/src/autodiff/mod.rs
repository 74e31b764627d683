//! Minimal reverse-mode differentiation engine: dense tensors, a recording
//! tape, and Adam. Built for the fixed architectures in this crate rather
//! than generality; see the non-goals in the crate docs.

mod param;
mod tape;
mod tensor;

pub use param::{adam_step, clear_grads, Parameter, SharedParam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{chol_solve, matern32_cov, Tape, Var};
pub use tensor::{
    cholesky, cholesky_jittered, chol_solve as chol_solve_raw, sigmoid, softplus, Tensor,
    JITTER_SCHEDULE,
};
