//! Re-optimizing entangling pulses when each Rydberg laser also drives the
//! other Rydberg transition, detuned by the Zeeman splitting `δω`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::program::{PulseSource, RealizedPulse};
use crate::grape::library::CrPulseLibrary;
use crate::algebra::{angles_equiv, cr, diagonal_phases, QuditSpace};
use crate::dynamics::{ControlMatrix, TimeGrid};
use crate::error::{Error, Result};
use crate::grape::{
    evaluate, optimize, raised_cosine_mask, AscentOptions, FreePhases, GrapeProblem, Init,
    Parametrization, PulseSchedule, Target, ToneSpec, DEFAULT_PHASE_PER_SLICE,
};
use crate::hamiltonian::{two_atom_system, Blockade, LevelScheme, TwoAtomConfig};

/// Largest phase per slice from the blockade shift or the crosstalk rotation.
const FAST_PHASE_PER_SLICE: f64 = 0.2;

fn crosstalk_grid(duration: f64, cap: f64, config: &TwoAtomConfig) -> Result<TimeGrid> {
    let mut max_step = DEFAULT_PHASE_PER_SLICE / cap;
    if let Blockade::Finite(v) = config.blockade {
        max_step = max_step.min(2.0 * FAST_PHASE_PER_SLICE / (v + 4.0 * cap));
    }
    if let Some(delta) = config.crosstalk_delta {
        max_step = max_step.min(FAST_PHASE_PER_SLICE / delta.abs());
    }
    TimeGrid::with_max_step(duration, max_step)
}

fn check_config(config: &TwoAtomConfig) -> Result<&LevelScheme> {
    let scheme = &config.scheme;
    if scheme.n_ryd() != 2 {
        return Err(Error::InvalidConfig("crosstalk workflow needs exactly two Rydberg levels".into()));
    }
    Ok(scheme)
}

/// Problem for `CR_S(θ)` on the physical pair with both Rydberg lasers as
/// controls and free local phases on both Rydberg-coupled levels.
pub fn crosstalk_cr_problem(
    config: &TwoAtomConfig,
    targets: &[usize],
    theta: f64,
    duration: f64,
    cap: f64,
) -> Result<GrapeProblem> {
    let scheme = check_config(config)?;
    let system = two_atom_system(config, &[0, 1])?;
    let gate = cr(QuditSpace::new(scheme.d())?, targets, theta)?;
    let free = FreePhases { d: scheme.d(), n_qudits: 2, levels: scheme.couplings().to_vec() };
    let grid = crosstalk_grid(duration, cap, config)?;
    let tones = (0..2).map(|k| ToneSpec { lower: scheme.couplings()[k], upper: scheme.rydberg_index(k), cap }).collect();
    GrapeProblem::new(system, Target::with_free_phases(&gate, free)?, grid, tones)
}

/// Piecewise-constant resampling of `controls` onto `target`.
fn resample(controls: &ControlMatrix, from: TimeGrid, target: TimeGrid) -> ControlMatrix {
    let stretch = from.duration() / target.duration();
    ControlMatrix::from_fn(controls.nrows(), target.n_slices(), |m, r| {
        let t = target.midpoint(r) * stretch;
        let k = ((t / from.dt()) as usize).min(from.n_slices() - 1);
        controls[(m, k)]
    })
}

/// Fidelity of a pulse designed without crosstalk when run on `config`,
/// against `CR_S(θ)` followed by the local phases its sequence removes.
pub fn crosstalk_fidelity(config: &TwoAtomConfig, pulse: &RealizedPulse, targets: &[usize], theta: f64, cap: f64) -> Result<f64> {
    let scheme = check_config(config)?;
    let system = two_atom_system(config, &pulse.tones)?;
    let d = scheme.d();
    let mut phases = vec![0.0; d];
    for &(l, chi) in &pulse.level_phases {
        phases[l] = chi;
    }
    let local = diagonal_phases(&phases);
    let gate = local.tensor(&local).compose(&cr(QuditSpace::new(d)?, targets, theta)?)?;
    let grid = crosstalk_grid(pulse.grid.duration(), cap, config)?;
    let tones = pulse
        .tones
        .iter()
        .map(|&k| ToneSpec { lower: scheme.couplings()[k], upper: scheme.rydberg_index(k), cap })
        .collect();
    let problem = GrapeProblem::new(system, Target::fixed(&gate), grid, tones)?;
    let controls = resample(&pulse.controls, pulse.grid, grid);
    Ok(evaluate(&problem, &controls, false)?.fidelity)
}

#[derive(Clone, Copy, Debug)]
pub struct CrosstalkOptions {
    pub cap: f64,
    /// New duration relative to the crosstalk-free pulse.
    pub duration_factor: f64,
    pub ramp_fraction: f64,
    /// Harmonics of `ω₀ = 2π/T`; the series has `2h + 1` terms.
    pub harmonics: usize,
    pub target: f64,
    pub ascent: AscentOptions,
}

impl CrosstalkOptions {
    pub fn new(cap: f64) -> Self {
        Self {
            cap,
            duration_factor: 1.1,
            ramp_fraction: 0.05,
            harmonics: 12,
            target: 0.999,
            ascent: AscentOptions { max_iter: 600, ..AscentOptions::default() },
        }
    }
}

/// A re-optimized pulse for one target set, driving both Rydberg lasers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetedPulse {
    pub targets: Vec<usize>,
    pub theta: f64,
    pub level_phases: Vec<(usize, f64)>,
    pub fidelity: f64,
    pub converged: bool,
    pub schedule: PulseSchedule,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetedPulseSet {
    pub pulses: Vec<TargetedPulse>,
}

impl TargetedPulseSet {
    pub fn find(&self, targets: &[usize], theta: f64) -> Result<&TargetedPulse> {
        self.pulses
            .iter()
            .find(|p| p.targets == targets && angles_equiv(p.theta, theta))
            .ok_or_else(|| Error::MissingPulse(format!("CR{targets:?}({theta})")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl PulseSource for TargetedPulseSet {
    fn realize(&self, _scheme: &LevelScheme, targets: &[usize], theta: f64) -> Result<RealizedPulse> {
        let p = self.find(targets, theta)?;
        Ok(RealizedPulse {
            tones: vec![0, 1],
            controls: p.schedule.controls(),
            grid: p.schedule.grid,
            level_phases: p.level_phases.clone(),
        })
    }
}

/// Fourier GRAPE for each `(targets, θ)` against the crosstalk Hamiltonian
/// with the finite blockade of `config`, warm-started from the library pulse
/// on the target tones and zero on the others. Pulses that miss
/// `opts.target` are returned with `converged = false`.
pub fn reoptimize_with_crosstalk(
    config: &TwoAtomConfig,
    gates: &[(Vec<usize>, f64)],
    library: &CrPulseLibrary,
    opts: &CrosstalkOptions,
) -> Result<TargetedPulseSet> {
    let scheme = check_config(config)?;
    if config.crosstalk_delta.is_none() {
        return Err(Error::InvalidConfig("config has no crosstalk splitting".into()));
    }
    let mut set = TargetedPulseSet::default();
    for (targets, theta) in gates {
        let reference = library.get(*theta)?;
        let duration = reference.duration() * opts.duration_factor;
        let problem = crosstalk_cr_problem(config, targets, *theta, duration, opts.cap)?;
        let grid = problem.grid;
        let mask = raised_cosine_mask(grid, opts.ramp_fraction * duration);
        let param = Parametrization::fourier(problem.caps(), TAU / duration, 2 * opts.harmonics + 1, grid, Some(mask))?;
        let base = resample(&reference.schedule.controls(), reference.schedule.grid, grid);
        let mut init = ControlMatrix::zeros(4, grid.n_slices());
        for &l in targets {
            let k = scheme
                .rydberg_for(l)
                .ok_or_else(|| Error::InvalidTones(format!("level {l} is not Rydberg-coupled")))?;
            init.row_mut(2 * k).copy_from(&base.row(0));
            init.row_mut(2 * k + 1).copy_from(&base.row(1));
        }
        let Parametrization::Fourier(fourier) = &param else { unreachable!("built as Fourier") };
        let start = fourier.fit(&init)?;
        let ascent = AscentOptions { target: Some(opts.target), ..opts.ascent };
        let result = optimize(&problem, &param, Init::Params(start), &ascent)?;
        let level_phases = scheme.couplings().iter().copied().zip(result.chi.iter().copied()).collect();
        log::info!("crosstalk CR{targets:?}({theta:.4}): F = {:.6}", result.fidelity);
        set.pulses.push(TargetedPulse {
            targets: targets.clone(),
            theta: *theta,
            level_phases,
            fidelity: result.fidelity,
            converged: result.fidelity >= opts.target,
            schedule: result.pulse,
        });
    }
    Ok(set)
}
