//! Controlled-phase pulses for global Rydberg drives, and the pulse library
//! that sequences draw from.
//!
//! A `CR_S(θ)` pulse applies the same envelope to every tone in `S`. The
//! blockaded pair dynamics then depend only on whether each atom sits in `S`,
//! so every such pulse is optimized once in the reduced model with one
//! coupled level (`d = 2`, `|1⟩ ↔ |r⟩`) and reused for all target sets.

use serde::{Deserialize, Serialize};

use super::{
    default_grid, find_optimal_time, multi_start, AscentOptions, FreePhases, GrapeProblem, OptimizationResult,
    Parametrization, PulseSchedule, ScanOptions, Target, TimeScan, ToneSpec, DEFAULT_PHASE_PER_SLICE,
};
use crate::algebra::{angles_equiv, cr, cz, wrap_angle, CMatrix, QuditSpace, C64};
use crate::dynamics::{ControlOperator, ControlSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::grape::raised_cosine_mask;
use crate::hamiltonian::{
    mhz_to_rad, rad_to_mhz, two_atom_system, Blockade, LevelScheme, MaybeInfinite, TwoAtomBasis, TwoAtomConfig,
};

/// Largest `|H|·dt` allowed when the blockade shift sets the time step.
const BLOCKADE_PHASE_PER_SLICE: f64 = 0.4;

/// Settings shared by every pulse in a library.
#[derive(Clone, Copy, Debug)]
pub struct CrOptions {
    pub cap: f64,
    pub blockade: Blockade,
    /// Raised-cosine rise and fall, as a fraction of the pulse duration.
    pub ramp_fraction: f64,
    pub restarts: usize,
    pub seed: u64,
    pub ascent: AscentOptions,
}

impl CrOptions {
    pub fn new(cap: f64, blockade: Blockade) -> Self {
        Self { cap, blockade, ramp_fraction: 0.0, restarts: 8, seed: 0, ascent: AscentOptions::default() }
    }
}

/// Grid with `dt·Ω̄ ≤ 0.02`, refined further when a finite blockade shift
/// dominates the spectrum.
pub fn pulse_grid(duration: f64, cap: f64, blockade: Blockade) -> Result<TimeGrid> {
    let mut max_step = DEFAULT_PHASE_PER_SLICE / cap;
    if let Blockade::Finite(v) = blockade {
        max_step = max_step.min(BLOCKADE_PHASE_PER_SLICE / (v.abs() + 2.0 * cap));
    }
    TimeGrid::with_max_step(duration, max_step)
}

/// Reduced two-atom problem for `CR(θ)` with a free phase on the coupled
/// level, parametrized by phases at fixed (ramped) maximal amplitude.
pub fn reduced_cr_problem(theta: f64, duration: f64, opts: &CrOptions) -> Result<(GrapeProblem, Parametrization)> {
    let scheme = LevelScheme::standard(2, 1)?;
    let config = TwoAtomConfig::new(scheme, opts.blockade, None)?;
    let system = two_atom_system(&config, &[0])?;
    let gate = cr(QuditSpace::new(2)?, &[1], theta)?;
    let target = Target::with_free_phases(&gate, FreePhases { d: 2, n_qudits: 2, levels: vec![1] })?;
    let grid = pulse_grid(duration, opts.cap, opts.blockade)?;
    let tones = vec![ToneSpec { lower: 1, upper: 2, cap: opts.cap }];
    let problem = GrapeProblem::new(system, target, grid, tones)?;
    let mask = raised_cosine_mask(grid, opts.ramp_fraction * duration);
    let param = Parametrization::phase_only(problem.caps(), grid, Some(mask))?;
    Ok((problem, param))
}

/// Optimized `CR(θ)` envelope in the reduced model.
///
/// The realized gate is `CR_S(θ)` followed by `e^{iχ}` on every level of `S`
/// on each atom, which a sequence removes with virtual phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrPulse {
    pub theta: f64,
    pub chi: f64,
    pub fidelity: f64,
    pub schedule: PulseSchedule,
}

impl CrPulse {
    fn from_result(theta: f64, res: OptimizationResult) -> Self {
        Self { theta: wrap_angle(theta), chi: res.chi[0], fidelity: res.fidelity, schedule: res.pulse }
    }

    pub fn duration(&self) -> f64 {
        self.schedule.duration()
    }

    pub fn envelope(&self) -> &[C64] {
        &self.schedule.samples[0]
    }

    /// The pulse for `−θ`: conjugating the envelope conjugates the propagator.
    pub fn conjugate(&self) -> Self {
        Self {
            theta: wrap_angle(-self.theta),
            chi: wrap_angle(-self.chi),
            fidelity: self.fidelity,
            schedule: self.schedule.conjugate(),
        }
    }
}

pub fn optimize_cr_pulse(theta: f64, duration: f64, opts: &CrOptions) -> Result<CrPulse> {
    let (problem, param) = reduced_cr_problem(theta, duration, opts)?;
    let res = multi_start(&problem, &param, opts.seed, opts.restarts, &opts.ascent)?;
    Ok(CrPulse::from_result(theta, res))
}

/// Minimal-time scan for `CR(θ)` in `[t_min, t_max]`. Restart counts, seed and
/// ascent settings come from `scan`.
pub fn scan_cr_time(
    theta: f64,
    t_min: f64,
    t_max: f64,
    opts: &CrOptions,
    scan: &ScanOptions,
) -> Result<(TimeScan, CrPulse)> {
    let result = find_optimal_time(|t| reduced_cr_problem(theta, t, opts), t_min, t_max, scan)?;
    let pulse = CrPulse::from_result(theta, result.best.clone());
    Ok((result, pulse))
}

/// CR pulses keyed by their wrapped angle. Lookups of `−θ` fall back to the
/// conjugate of a stored `θ` pulse.
#[derive(Clone, Debug)]
pub struct CrPulseLibrary {
    pub cap: f64,
    pub blockade: Blockade,
    pulses: Vec<CrPulse>,
}

impl CrPulseLibrary {
    pub fn new(cap: f64, blockade: Blockade) -> Self {
        Self { cap, blockade, pulses: Vec::new() }
    }

    pub fn pulses(&self) -> &[CrPulse] {
        &self.pulses
    }

    pub fn insert(&mut self, pulse: CrPulse) {
        self.pulses.retain(|p| !angles_equiv(p.theta, pulse.theta));
        self.pulses.push(pulse);
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.get(theta).is_ok()
    }

    pub fn get(&self, theta: f64) -> Result<CrPulse> {
        if let Some(p) = self.pulses.iter().find(|p| angles_equiv(p.theta, theta)) {
            return Ok(p.clone());
        }
        if let Some(p) = self.pulses.iter().find(|p| angles_equiv(p.theta, -theta)) {
            return Ok(p.conjugate());
        }
        Err(Error::MissingPulse(format!("CR({theta:.6})")))
    }

    /// Adds optimized pulses for every listed angle not already covered.
    pub fn ensure(&mut self, thetas: &[f64], duration: impl Fn(f64) -> f64, opts: &CrOptions) -> Result<()> {
        for &theta in thetas {
            if !self.contains(theta) {
                self.insert(optimize_cr_pulse(theta, duration(theta), opts)?);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = LibraryJson {
            schema_version: super::SCHEMA_VERSION,
            cap_mhz: rad_to_mhz(self.cap),
            v_mhz: match self.blockade {
                Blockade::Perfect => MaybeInfinite::infinite(),
                Blockade::Finite(v) => MaybeInfinite::Value(rad_to_mhz(v)),
            },
            pulses: self.pulses.clone(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: LibraryJson = serde_json::from_str(text)?;
        if raw.schema_version != super::SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported library schema version {}", raw.schema_version)));
        }
        let blockade = match raw.v_mhz.value()? {
            None => Blockade::Perfect,
            Some(v) => Blockade::Finite(mhz_to_rad(v)),
        };
        Ok(Self { cap: mhz_to_rad(raw.cap_mhz), blockade, pulses: raw.pulses })
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryJson {
    schema_version: u32,
    #[serde(rename = "cap_MHz")]
    cap_mhz: f64,
    #[serde(rename = "V_MHz")]
    v_mhz: MaybeInfinite,
    pulses: Vec<CrPulse>,
}

/// Harmonic count and base frequency of the simultaneous-tone CZ search.
pub const SIMULTANEOUS_CZ_TERMS: usize = 13;

/// Qutrit pair driven on `0↔1`, `1↔2` and `2↔r` at once, perfect blockade.
pub fn simultaneous_cz_problem(cap: f64, duration: f64) -> Result<(GrapeProblem, Parametrization)> {
    let scheme = LevelScheme::new(3, vec![2])?;
    let basis = TwoAtomBasis::new(&scheme, Blockade::Perfect);
    let n = scheme.single_dim();
    let pairs = [(0, 1), (1, 2), (2, scheme.rydberg_index(0))];
    let mut controls = Vec::with_capacity(6);
    for &(g, e) in &pairs {
        let mut hx = CMatrix::zeros(n, n);
        hx[(g, e)] = C64::new(1.0, 0.0);
        hx[(e, g)] = C64::new(1.0, 0.0);
        let mut hy = CMatrix::zeros(n, n);
        hy[(g, e)] = C64::new(0.0, 1.0);
        hy[(e, g)] = C64::new(0.0, -1.0);
        controls.push(ControlOperator::fixed(basis.lift_symmetric(&hx)));
        controls.push(ControlOperator::fixed(basis.lift_symmetric(&hy)));
    }
    let system = ControlSystem::new(CMatrix::zeros(basis.dim(), basis.dim()), controls, basis.comp_dim())?;
    let grid = default_grid(duration, cap)?;
    let tones = pairs.iter().map(|&(lower, upper)| ToneSpec { lower, upper, cap }).collect();
    let problem = GrapeProblem::new(system, Target::fixed(&cz(QuditSpace::new(3)?)), grid, tones)?;
    let param = Parametrization::fourier(problem.caps(), cap / 2.0, SIMULTANEOUS_CZ_TERMS, grid, None)?;
    Ok((problem, param))
}

/// Fourier-parametrized three-tone qutrit CZ at a fixed duration, with
/// `ω₀ = Ω̄/2` and 13 terms (cutoff `3Ω̄`).
pub fn synthesize_cz_simultaneous_qutrit(
    cap: f64,
    duration: f64,
    seed: u64,
    restarts: usize,
    ascent: &AscentOptions,
) -> Result<OptimizationResult> {
    let (problem, param) = simultaneous_cz_problem(cap, duration)?;
    multi_start(&problem, &param, seed, restarts, ascent)
}
