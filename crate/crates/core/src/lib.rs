//! Interferometric distillation and concurrence determination for
//! unknown two-qubit states.
//!
//! The crate is organized bottom-up:
//!
//! * [`qstate`]: density matrices, Pauli-basis coefficients, named states and
//!   the spin-flip concurrence used as a reference.
//! * [`optics`]: local filter/rotation operators and the alternating
//!   distillation protocol.
//! * [`detection`]: the exact measurement model and concurrence from the
//!   visibility extrema.
//! * [`shots`]: finite-statistics simulation of the same protocol.
//! * [`cli`]: report generation behind the `qconc` binary.

pub mod cli;
pub mod detection;
mod jacobi;
pub mod optics;
pub mod qstate;
pub mod shots;

pub use jacobi::{svd3, Svd3};
