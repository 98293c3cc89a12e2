//! Fixtures shared by the benchmarks.

use qudit_core::dynamics::ControlMatrix;
use qudit_core::grape::GrapeProblem;
use qudit_core::hamiltonian::mhz_to_rad;

/// Rabi cap used throughout, 2π × 5 MHz.
pub fn cap() -> f64 {
    mhz_to_rad(5.0)
}

/// Smooth, non-trivial controls at 40% of each tone's cap.
pub fn smooth_controls(problem: &GrapeProblem) -> ControlMatrix {
    let n = problem.grid.n_slices();
    let caps = problem.caps();
    ControlMatrix::from_fn(2 * caps.len(), n, |c, r| {
        let phase = 2.0 * std::f64::consts::PI * r as f64 / n as f64 + c as f64;
        0.2 * caps[c / 2] * if c % 2 == 0 { phase.cos() } else { phase.sin() }
    })
}
