//! Single-qudit gates driven on the ladder `0↔1, 1↔2, …` at full amplitude.

use super::{default_grid, find_optimal_time, GrapeProblem, Parametrization, ScanOptions, Target, TimeScan, ToneSpec};
use crate::algebra::QuditGate;
use crate::error::Result;
use crate::hamiltonian::control_basis;

/// Phase-only problem for `gate` on one atom, every ladder tone capped at `cap`.
pub fn single_qudit_problem(gate: &QuditGate, cap: f64, duration: f64) -> Result<(GrapeProblem, Parametrization)> {
    let d = gate.dim();
    let pairs: Vec<(usize, usize)> = (0..d - 1).map(|k| (k, k + 1)).collect();
    let basis = control_basis(d, &pairs)?;
    let grid = default_grid(duration, cap)?;
    let tones = pairs.iter().map(|&(lower, upper)| ToneSpec { lower, upper, cap }).collect();
    let problem = GrapeProblem::new(basis.system(), Target::fixed(gate), grid, tones)?;
    let param = Parametrization::phase_only(problem.caps(), grid, None)?;
    Ok((problem, param))
}

/// Minimal-time scan for `gate` over `[t_min, t_max]`.
pub fn scan_single_qudit_time(gate: &QuditGate, cap: f64, t_min: f64, t_max: f64, scan: &ScanOptions) -> Result<TimeScan> {
    find_optimal_time(|t| single_qudit_problem(gate, cap, t), t_min, t_max, scan)
}
