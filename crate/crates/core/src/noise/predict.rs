//! Decay-only infidelity estimate for compiled CZ sequences.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::algebra::is_trivial_angle;
use crate::compiler::compile_cz;
use crate::dynamics::{average_population, propagate};
use crate::error::Result;
use crate::grape::library::{CrPulse, CrPulseLibrary};
use crate::hamiltonian::{two_atom_system, LevelScheme, TwoAtomConfig};

/// `χ_ryd·T` of a library pulse: time-integrated Rydberg population
/// `Π_ryd + 2Π_bloc` in the reduced pair model, averaged over its four
/// computational inputs.
pub fn pulse_exposure(pulse: &CrPulse, library: &CrPulseLibrary) -> Result<f64> {
    let config = TwoAtomConfig::new(LevelScheme::standard(2, 1)?, library.blockade, None)?;
    let system = two_atom_system(&config, &[0])?;
    let grid = pulse.schedule.grid;
    let record = propagate(&system, &pulse.schedule.controls(), grid)?;
    let weights: Vec<f64> = config.basis().rydberg_count().into_iter().map(|c| c as f64).collect();
    Ok(average_population(&system, &record, &weights)? * grid.duration())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPrediction {
    pub d: usize,
    /// `1 − Π e^{−χ_ryd·T/τ}` over the non-trivial pulses of `compile_cz(d)`,
    /// a two-tone pulse counting with twice the single-tone exposure.
    pub product_infidelity: f64,
    /// `1 − F₁^{(d−1)²}` with `F₁ = e^{−χ_ryd·T/τ}` of `CR(π)`.
    pub closed_form_infidelity: f64,
    /// Non-trivial pulses, two-tone pulses counted twice.
    pub weighted_count: usize,
    /// Mean duration of the non-trivial pulses, seconds.
    pub mean_duration: f64,
}

/// Predicted decay-limited CZ infidelity for dimension `d`. The library must
/// hold `CR(π)` and every angle `compile_cz(d)` uses (or its negative).
pub fn predict_cz_infidelity(d: usize, tau_ryd: f64, library: &CrPulseLibrary) -> Result<ScalingPrediction> {
    let seq = compile_cz(d)?;
    let mut exponent = 0.0;
    let mut weighted = 0;
    let mut durations = Vec::new();
    for (targets, theta) in seq.cr_steps() {
        if is_trivial_angle(theta) {
            continue;
        }
        let pulse = library.get(theta)?;
        exponent += targets.len() as f64 * pulse_exposure(&pulse, library)? / tau_ryd;
        weighted += targets.len();
        durations.push(pulse.duration());
    }
    let reference = library.get(PI)?;
    let f1 = (-pulse_exposure(&reference, library)? / tau_ryd).exp();
    let n = ((d - 1) * (d - 1)) as i32;
    Ok(ScalingPrediction {
        d,
        product_infidelity: -(-exponent).exp_m1(),
        closed_form_infidelity: 1.0 - f1.powi(n),
        weighted_count: weighted,
        mean_duration: durations.iter().sum::<f64>() / durations.len().max(1) as f64,
    })
}
