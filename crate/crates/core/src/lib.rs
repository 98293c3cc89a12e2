//! Pulse-level control of neutral-atom qudits.
//!
//! The crate covers the pipeline from gate algebra to noisy benchmarks:
//!
//! - [`algebra`]: qudit gates, the conditional-phase family and fidelities.
//! - [`hamiltonian`]: single-atom and blockaded two-atom drive Hamiltonians.
//! - [`dynamics`]: block-sparse piecewise-constant propagation.
//! - [`compiler`]: CZ sequences from controlled-phase pulses, with exact checks.
//! - [`grape`]: gradient pulse optimization and minimal-time scans.
//! - [`noise`]: quantum-jump benchmarks, decay-limited scaling estimates and
//!   crosstalk re-optimization.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod compiler;
pub mod dynamics;
pub mod error;
pub mod grape;
pub mod hamiltonian;
pub mod noise;
pub mod rng;

pub use algebra::{CMatrix, CVector, QuditGate, QuditSpace, StateVector, C64};
pub use error::{Error, Result};
