//! Quantum-jump benchmarking of pulse sequences under Rydberg decay,
//! shot-to-shot detuning and intensity noise, finite blockade and crosstalk.
//!
//! Each trajectory samples one detuning offset and one intensity factor, then
//! evolves the pair under `H_eff = H(t) − (i/2)Γ·N_ryd` with `N_ryd` the number
//! of Rydberg atoms. A jump fires when the squared norm drops below a
//! pre-drawn uniform threshold, and takes one atom from its Rydberg level to
//! the decay target level.

mod crosstalk;
mod predict;
mod program;

pub use crosstalk::{
    crosstalk_cr_problem, crosstalk_fidelity, reoptimize_with_crosstalk, CrosstalkOptions, TargetedPulse,
    TargetedPulseSet,
};
pub use predict::{pulse_exposure, predict_cz_infidelity, ScalingPrediction};
pub use program::{evolve, Perturbation, Program, PulseSource, PulseStage, RealizedPulse, Stage};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{CVector, C64};
use crate::error::{Error, Result};
use crate::hamiltonian::{mhz_to_rad, rad_to_mhz, Blockade, MaybeInfinite};
use crate::rng::{stream, StreamRng};
use program::{rydberg_population, Stepper};

/// Physical noise parameters. Rates in rad/s, times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    /// Rydberg lifetime; `f64::INFINITY` disables decay.
    pub tau_ryd: f64,
    /// Standard deviation of the common-mode Rydberg detuning.
    pub detuning_sigma: f64,
    /// Spread of the relative laser intensity, used as the standard deviation
    /// of `I ~ N(1, ·)`.
    pub intensity_rel_var: f64,
    pub blockade: Blockade,
    pub crosstalk_delta: Option<f64>,
    /// Level every Rydberg decay lands in.
    pub decay_target: usize,
}

impl NoiseModel {
    /// No noise and no decay on top of the given interaction.
    pub fn ideal(blockade: Blockade) -> Self {
        Self {
            tau_ryd: f64::INFINITY,
            detuning_sigma: 0.0,
            intensity_rel_var: 0.0,
            blockade,
            crosstalk_delta: None,
            decay_target: 0,
        }
    }

    /// τ = 60 µs, σ = 2π×40 kHz, intensity variance 0.008, V = 2π×220 MHz.
    pub fn alkaline_earth_defaults() -> Self {
        Self {
            tau_ryd: 60e-6,
            detuning_sigma: mhz_to_rad(0.040),
            intensity_rel_var: 0.008,
            blockade: Blockade::Finite(mhz_to_rad(220.0)),
            crosstalk_delta: None,
            decay_target: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ryd > 0.0) {
            return Err(Error::InvalidConfig(format!("Rydberg lifetime must be positive, got {}", self.tau_ryd)));
        }
        if !(self.intensity_rel_var >= 0.0) || !self.intensity_rel_var.is_finite() {
            return Err(Error::InvalidConfig(format!("intensity variance must be >= 0, got {}", self.intensity_rel_var)));
        }
        if !(self.detuning_sigma >= 0.0) || !self.detuning_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("detuning spread must be >= 0, got {}", self.detuning_sigma)));
        }
        Ok(())
    }

    pub fn decay_rate(&self) -> f64 {
        1.0 / self.tau_ryd
    }
}

/// Trajectory count, master seed and time-step refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub n_traj: usize,
    pub seed: u64,
    /// Each pulse slice is propagated in this many equal substeps.
    pub substeps: usize,
    /// Run trajectories on the rayon pool; results do not depend on it.
    pub parallel: bool,
}

impl TrajectoryConfig {
    pub const DEFAULT_N_TRAJ: usize = 20_000;

    pub fn new(n_traj: usize, seed: u64) -> Self {
        Self { n_traj, seed, substeps: 1, parallel: true }
    }
}

/// Noise config file `{tau_ryd_us, detuning_sigma_kHz, intensity_rel_var,
/// V_MHz | "inf", delta_MHz | null, n_traj, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfigJson {
    pub tau_ryd_us: MaybeInfinite,
    #[serde(rename = "detuning_sigma_kHz")]
    pub detuning_sigma_khz: f64,
    pub intensity_rel_var: f64,
    #[serde(rename = "V_MHz")]
    pub v_mhz: MaybeInfinite,
    #[serde(rename = "delta_MHz", default)]
    pub delta_mhz: Option<f64>,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub decay_target: usize,
}

fn default_n_traj() -> usize {
    TrajectoryConfig::DEFAULT_N_TRAJ
}

impl NoiseConfigJson {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model(&self) -> Result<NoiseModel> {
        let tau_ryd = self.tau_ryd_us.value()?.map_or(f64::INFINITY, |t| t * 1e-6);
        let blockade = match self.v_mhz.value()? {
            None => Blockade::Perfect,
            Some(v) => Blockade::Finite(mhz_to_rad(v)),
        };
        let model = NoiseModel {
            tau_ryd,
            detuning_sigma: mhz_to_rad(self.detuning_sigma_khz * 1e-3),
            intensity_rel_var: self.intensity_rel_var,
            blockade,
            crosstalk_delta: self.delta_mhz.map(mhz_to_rad),
            decay_target: self.decay_target,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn trajectories(&self) -> Result<TrajectoryConfig> {
        if self.n_traj == 0 {
            return Err(Error::InvalidConfig("n_traj must be at least 1".into()));
        }
        Ok(TrajectoryConfig::new(self.n_traj, self.seed))
    }

    pub fn from_model(model: &NoiseModel, traj: &TrajectoryConfig) -> Self {
        Self {
            tau_ryd_us: if model.tau_ryd.is_finite() {
                MaybeInfinite::Value(model.tau_ryd * 1e6)
            } else {
                MaybeInfinite::infinite()
            },
            detuning_sigma_khz: rad_to_mhz(model.detuning_sigma) * 1e3,
            intensity_rel_var: model.intensity_rel_var,
            v_mhz: match model.blockade {
                Blockade::Perfect => MaybeInfinite::infinite(),
                Blockade::Finite(v) => MaybeInfinite::Value(rad_to_mhz(v)),
            },
            delta_mhz: model.crosstalk_delta.map(rad_to_mhz),
            n_traj: traj.n_traj,
            seed: traj.seed,
            decay_target: model.decay_target,
        }
    }
}

/// Per-shot noise realization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shot {
    /// Common-mode shift of all Rydberg levels, rad/s.
    pub detuning: f64,
    /// Multiplies every Rydberg-tone envelope for the whole shot.
    pub amplitude_scale: f64,
}

/// Draws `δ ~ N(0, σ)` and `s = √max(0, I)` with `I ~ N(1, intensity_rel_var)`,
/// both normals parametrized by their standard deviation.
pub fn sample_shot<R: Rng>(model: &NoiseModel, rng: &mut R) -> Shot {
    let detuning = if model.detuning_sigma > 0.0 {
        Normal::new(0.0, model.detuning_sigma).expect("finite spread").sample(rng)
    } else {
        0.0
    };
    let amplitude_scale = if model.intensity_rel_var > 0.0 {
        let i: f64 = Normal::new(1.0, model.intensity_rel_var).expect("finite spread").sample(rng);
        i.max(0.0).sqrt()
    } else {
        1.0
    };
    Shot { detuning, amplitude_scale }
}

/// A decay event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    /// Index into the program's pulse stages.
    pub pulse: usize,
    pub slice: usize,
    pub atom: usize,
    /// Rydberg slot the atom decayed from.
    pub slot: usize,
}

#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    /// Normalized final state.
    pub state: CVector,
    pub jumps: Vec<Jump>,
}

/// Index of the state reached when `atom` in `(a, b)` drops to `target`.
fn decay_image(program: &Program, i: usize, atom: usize, target: usize) -> Option<usize> {
    let (a, b) = program.basis.states()[i];
    if atom == 0 {
        program.basis.index(target, b)
    } else {
        program.basis.index(a, target)
    }
}

/// Applies the jump operator `|target⟩⟨r_k|` on `atom` to `psi`.
fn apply_jump(program: &Program, psi: &CVector, atom: usize, rydberg_level: usize, target: usize) -> CVector {
    let mut out = CVector::zeros(psi.len());
    for (i, &(a, b)) in program.basis.states().iter().enumerate() {
        let level = if atom == 0 { a } else { b };
        if level == rydberg_level {
            if let Some(j) = decay_image(program, i, atom, target) {
                out[j] += psi[i];
            }
        }
    }
    out
}

/// One quantum-jump trajectory from `initial` (computational, embedded).
pub fn quantum_jump_trajectory(
    program: &Program,
    model: &NoiseModel,
    shot: Shot,
    rng: &mut StreamRng,
    initial: &CVector,
    substeps: usize,
) -> Result<TrajectoryOutcome> {
    let scheme = &program.config.scheme;
    if model.decay_target >= scheme.d() {
        return Err(Error::LevelOutOfRange { level: model.decay_target, dim: scheme.d() });
    }
    let decay_rate = if model.tau_ryd.is_finite() { model.decay_rate() } else { 0.0 };
    let perturbation = Perturbation { amplitude_scale: shot.amplitude_scale, detuning: shot.detuning, decay_rate };
    let mut psi = initial.clone();
    let mut jumps = Vec::new();
    let mut threshold: f64 = rng.random();
    let mut pulse_index = 0;
    for stage in &program.stages {
        match stage {
            Stage::Unitary(u) => psi = u * &psi,
            Stage::Pulse(p) => {
                let mut stepper = Stepper::new(p, program, perturbation);
                for r in 0..p.grid.n_slices() {
                    stepper.slice(&mut psi, r, substeps, shot.amplitude_scale);
                    let norm = psi.norm_squared();
                    if !norm.is_finite() || norm < 1e-300 {
                        return Err(Error::NormUnderflow { norm, slice: r });
                    }
                    if decay_rate > 0.0 && norm < threshold {
                        let jump = choose_jump(program, &psi, model.decay_target, rng);
                        let level = scheme.rydberg_index(jump.1);
                        psi = apply_jump(program, &psi, jump.0, level, model.decay_target);
                        let n = psi.norm();
                        psi /= C64::new(n, 0.0);
                        jumps.push(Jump { pulse: pulse_index, slice: r, atom: jump.0, slot: jump.1 });
                        threshold = rng.random();
                    }
                }
                pulse_index += 1;
            }
        }
    }
    let n = psi.norm();
    psi /= C64::new(n, 0.0);
    Ok(TrajectoryOutcome { state: psi, jumps })
}

/// Picks `(atom, slot)` with probability proportional to `‖c ψ‖²`.
fn choose_jump(program: &Program, psi: &CVector, target: usize, rng: &mut StreamRng) -> (usize, usize) {
    let scheme = &program.config.scheme;
    let d = scheme.d();
    let mut weights = Vec::with_capacity(2 * scheme.n_ryd());
    for atom in 0..2 {
        for k in 0..scheme.n_ryd() {
            let level = scheme.rydberg_index(k);
            let w: f64 = program
                .basis
                .states()
                .iter()
                .enumerate()
                .filter(|(i, &(a, b))| (if atom == 0 { a } else { b }) == level && decay_image(program, *i, atom, target).is_some())
                .map(|(i, _)| psi[i].norm_sqr())
                .sum();
            weights.push(((atom, k), w));
        }
    }
    debug_assert!(d > target);
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(choice, w) in &weights {
        if x < w {
            return choice;
        }
        x -= w;
    }
    weights.iter().rev().find(|(_, w)| *w > 0.0).map_or((0, 0), |(c, _)| *c)
}

/// Summary of one pulse in a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSummary {
    pub label: String,
    pub duration_us: f64,
    /// `∫⟨N_ryd⟩dt` along the noiseless evolution of the benchmark input, µs.
    pub rydberg_time_us: f64,
    /// Mean number of decays during this pulse.
    pub mean_jumps: f64,
}

/// Benchmark result `{fidelity, stderr, n_traj, per_pulse, jumps}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub fidelity: f64,
    pub stderr: f64,
    pub n_traj: usize,
    pub per_pulse: Vec<PulseSummary>,
    /// `jumps[n]` counts trajectories with exactly `n` decays.
    pub jumps: Vec<u64>,
}

impl SimResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Mean of the jump-count histogram.
    pub fn mean_jumps(&self) -> f64 {
        let n: u64 = self.jumps.iter().sum();
        let s: f64 = self.jumps.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum();
        s / n as f64
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

struct Sample {
    fidelity: f64,
    jumps_per_pulse: Vec<u32>,
}

fn run_one(program: &Program, model: &NoiseModel, cfg: &TrajectoryConfig, k: usize, psi0: &CVector, ideal: &CVector, n_pulses: usize) -> Result<Sample> {
    let mut rng = stream(cfg.seed, k as u64);
    let shot = sample_shot(model, &mut rng);
    let out = quantum_jump_trajectory(program, model, shot, &mut rng, psi0, cfg.substeps)?;
    let overlap: C64 = ideal.iter().zip(out.state.iter()).map(|(a, b)| a.conj() * b).sum();
    let mut jumps_per_pulse = vec![0; n_pulses];
    for j in &out.jumps {
        jumps_per_pulse[j.pulse] += 1;
    }
    Ok(Sample { fidelity: overlap.norm_sqr(), jumps_per_pulse })
}

/// Mean fidelity `|⟨ψ_ideal|ψ⟩|²` over trajectories started in the uniform
/// superposition of computational pairs. Trajectory `k` draws from stream
/// `(seed, k)`, so results do not depend on scheduling.
pub fn benchmark_gate(program: &Program, model: &NoiseModel, cfg: &TrajectoryConfig) -> Result<SimResult> {
    model.validate()?;
    if cfg.n_traj == 0 || cfg.substeps == 0 {
        return Err(Error::InvalidConfig("n_traj and substeps must be at least 1".into()));
    }
    if model.blockade != program.config.blockade || model.crosstalk_delta != program.config.crosstalk_delta {
        return Err(Error::InvalidConfig("program was built for a different interaction model".into()));
    }
    let psi0 = program.uniform_input();
    let ideal = program.ideal_output(&psi0);
    let n_pulses = program.pulses().count();
    let samples: Vec<Sample> = if cfg.parallel {
        (0..cfg.n_traj)
            .into_par_iter()
            .map(|k| run_one(program, model, cfg, k, &psi0, &ideal, n_pulses))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.n_traj).map(|k| run_one(program, model, cfg, k, &psi0, &ideal, n_pulses)).collect::<Result<_>>()?
    };
    let n = cfg.n_traj as f64;
    let mean = compensated_sum(samples.iter().map(|s| s.fidelity)) / n;
    let var = if cfg.n_traj > 1 {
        compensated_sum(samples.iter().map(|s| (s.fidelity - mean).powi(2))) / (n - 1.0)
    } else {
        0.0
    };
    let mut histogram: Vec<u64> = Vec::new();
    for s in &samples {
        let total: u32 = s.jumps_per_pulse.iter().sum();
        if histogram.len() <= total as usize {
            histogram.resize(total as usize + 1, 0);
        }
        histogram[total as usize] += 1;
    }
    let (_, exposure) = evolve(program, &psi0, Perturbation::NONE, 1);
    let per_pulse = program
        .pulses()
        .enumerate()
        .map(|(i, p)| PulseSummary {
            label: p.label.clone(),
            duration_us: p.duration() * 1e6,
            rydberg_time_us: exposure[i] * 1e6,
            mean_jumps: samples.iter().map(|s| s.jumps_per_pulse[i] as f64).sum::<f64>() / n,
        })
        .collect();
    Ok(SimResult { fidelity: mean, stderr: (var / n).sqrt(), n_traj: cfg.n_traj, per_pulse, jumps: histogram })
}

/// Final population left in Rydberg levels along a noiseless run, a quick
/// leakage diagnostic for a program.
pub fn residual_rydberg_population(program: &Program) -> f64 {
    let (psi, _) = evolve(program, &program.uniform_input(), Perturbation::NONE, 1);
    rydberg_population(program, &psi)
}

#[cfg(test)]
mod tests;
