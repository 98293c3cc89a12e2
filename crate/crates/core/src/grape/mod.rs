//! Gradient-ascent pulse engineering.
//!
//! The objective is `F = |Tr(U_tar† P U P)|² / D²`, with `P` the projector
//! onto the leading `D` computational states. Gradients are exact: each slice
//! derivative uses the Fréchet derivative of the slice exponential in its
//! eigenbasis, so they agree with finite differences to rounding error at any
//! slice length.

mod ascent;
pub mod library;
mod param;
mod schedule;
mod single;

use rayon::prelude::*;
use serde::Serialize;

pub use ascent::{maximize, maximize_projected, AscentOptions, AscentOutcome, StopReason};
pub use param::{raised_cosine_mask, Fourier, FourierParams, Parametrization, PerSlice, PhaseOnly};
pub use schedule::{PulseSchedule, ToneSpec, SCHEMA_VERSION};
pub use single::{scan_single_qudit_time, single_qudit_problem};

use crate::algebra::{cis, trace_overlap, wrap_angle, CMatrix, QuditGate, C64};
use crate::dynamics::{propagate, ControlMatrix, ControlSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Largest `dt·Ω̄` used when a grid is chosen automatically.
pub const DEFAULT_PHASE_PER_SLICE: f64 = 0.02;

/// Default fidelity threshold defining the optimal time.
pub const DEFAULT_THRESHOLD: f64 = 1.0 - 1e-4;

/// Grid over `duration` with `dt·rate ≤ 0.02`.
pub fn default_grid(duration: f64, rate: f64) -> Result<TimeGrid> {
    TimeGrid::with_max_step(duration, DEFAULT_PHASE_PER_SLICE / rate)
}

/// Local phases left free in the target: level `l` of every qudit may pick up
/// `e^{iχ_l}`. Such phases are removable by zero-duration frame updates.
#[derive(Clone, Debug, PartialEq)]
pub struct FreePhases {
    pub d: usize,
    pub n_qudits: u32,
    pub levels: Vec<usize>,
}

/// Gate to reach on the computational subspace.
#[derive(Clone, Debug)]
pub struct Target {
    gate: CMatrix,
    free: Option<FreePhases>,
}

impl Target {
    pub fn fixed(gate: &QuditGate) -> Self {
        Self { gate: gate.matrix().clone(), free: None }
    }

    pub fn with_free_phases(gate: &QuditGate, free: FreePhases) -> Result<Self> {
        let dim = free.d.pow(free.n_qudits);
        if gate.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: gate.dim() });
        }
        if free.levels.is_empty() || free.levels.len() > 3 {
            return Err(Error::InvalidTargets("between one and three free phase levels are supported".into()));
        }
        if let Some(&l) = free.levels.iter().find(|&&l| l >= free.d) {
            return Err(Error::LevelOutOfRange { level: l, dim: free.d });
        }
        Ok(Self { gate: gate.matrix().clone(), free: Some(free) })
    }

    pub fn dim(&self) -> usize {
        self.gate.nrows()
    }

    pub fn gate(&self) -> &CMatrix {
        &self.gate
    }

    pub fn free_phases(&self) -> Option<&FreePhases> {
        self.free.as_ref()
    }

    /// Effective target `diag(e^{iφ(χ)})·U_tar` with `χ` maximizing the overlap.
    fn align(&self, projected: &CMatrix) -> (CMatrix, Vec<f64>) {
        let Some(free) = &self.free else {
            return (self.gate.clone(), Vec::new());
        };
        let dim = self.dim();
        let k = free.levels.len();
        // group basis states by how many qudits sit on each free level
        let mut groups: Vec<(Vec<f64>, C64)> = Vec::new();
        let mut counts_of = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut counts = vec![0.0; k];
            let mut rest = i;
            for _ in 0..free.n_qudits {
                let level = rest % free.d;
                rest /= free.d;
                if let Some(pos) = free.levels.iter().position(|&l| l == level) {
                    counts[pos] += 1.0;
                }
            }
            let w: C64 = (0..dim).map(|j| self.gate[(i, j)].conj() * projected[(i, j)]).sum();
            match groups.iter_mut().find(|(c, _)| *c == counts) {
                Some(g) => g.1 += w,
                None => groups.push((counts.clone(), w)),
            }
            counts_of.push(counts);
        }
        let chi = maximize_phase_overlap(&groups, k);
        let target = CMatrix::from_fn(dim, dim, |i, j| {
            let phi: f64 = counts_of[i].iter().zip(&chi).map(|(n, x)| n * x).sum();
            cis(phi) * self.gate[(i, j)]
        });
        (target, chi)
    }
}

/// Maximizes `|Σ_g W_g e^{−i n_g·χ}|²` by a grid search refined with Newton steps.
fn maximize_phase_overlap(groups: &[(Vec<f64>, C64)], k: usize) -> Vec<f64> {
    let value = |chi: &[f64]| -> f64 {
        groups
            .iter()
            .map(|(n, w)| w * cis(-n.iter().zip(chi).map(|(a, b)| a * b).sum::<f64>()))
            .sum::<C64>()
            .norm_sqr()
    };
    let per_dim: usize = match k {
        1 => 48,
        2 => 24,
        _ => 12,
    };
    let mut best = vec![0.0; k];
    let mut best_val = value(&best);
    let total = per_dim.pow(k as u32);
    let mut chi = vec![0.0; k];
    for idx in 0..total {
        let mut rest = idx;
        for c in chi.iter_mut() {
            *c = -std::f64::consts::PI + std::f64::consts::TAU * (rest % per_dim) as f64 / per_dim as f64;
            rest /= per_dim;
        }
        let v = value(&chi);
        if v > best_val {
            best_val = v;
            best.clone_from(&chi);
        }
    }
    for _ in 0..50 {
        // g = Σ W e^{−inχ}; ∂_l g = Σ −i n_l W e^{…}; ∂_l∂_m g = Σ −n_l n_m W e^{…}
        let mut g = C64::new(0.0, 0.0);
        let mut dg = vec![C64::new(0.0, 0.0); k];
        let mut ddg = vec![vec![C64::new(0.0, 0.0); k]; k];
        for (n, w) in groups {
            let term = w * cis(-n.iter().zip(&best).map(|(a, b)| a * b).sum::<f64>());
            g += term;
            for l in 0..k {
                dg[l] += C64::new(0.0, -n[l]) * term;
                for m in 0..k {
                    ddg[l][m] -= term * (n[l] * n[m]);
                }
            }
        }
        let grad: Vec<f64> = dg.iter().map(|d| 2.0 * (g.conj() * d).re).collect();
        let hess = nalgebra::DMatrix::from_fn(k, k, |l, m| 2.0 * (dg[l].conj() * dg[m] + g.conj() * ddg[l][m]).re);
        let gvec = nalgebra::DVector::from_column_slice(&grad);
        let step = match (-hess.clone()).cholesky() {
            Some(ch) => ch.solve(&gvec),
            None => gvec.clone() * 1e-3,
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = best.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let v = value(&trial);
            if v >= best_val {
                improved = v > best_val;
                best = trial;
                best_val = v;
                break;
            }
            t *= 0.5;
        }
        if !improved || step.norm() * t < 1e-14 {
            break;
        }
    }
    best.iter().map(|&c| wrap_angle(c)).collect()
}

/// Control system, target and grid for one optimization.
#[derive(Clone, Debug)]
pub struct GrapeProblem {
    pub system: ControlSystem,
    pub target: Target,
    pub grid: TimeGrid,
    pub tones: Vec<ToneSpec>,
}

impl GrapeProblem {
    pub fn new(system: ControlSystem, target: Target, grid: TimeGrid, tones: Vec<ToneSpec>) -> Result<Self> {
        if target.dim() != system.comp_dim() {
            return Err(Error::DimensionMismatch { expected: system.comp_dim(), got: target.dim() });
        }
        if 2 * tones.len() != system.n_controls() {
            return Err(Error::DimensionMismatch { expected: system.n_controls(), got: 2 * tones.len() });
        }
        if tones.iter().any(|t| !(t.cap > 0.0)) {
            return Err(Error::InvalidConfig("amplitude caps must be positive".into()));
        }
        Ok(Self { system, target, grid, tones })
    }

    pub fn caps(&self) -> Vec<f64> {
        self.tones.iter().map(|t| t.cap).collect()
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self { grid, ..self.clone() }
    }
}

/// Fidelity of a control set, optionally with its exact gradient.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub fidelity: f64,
    /// `Tr(U_tar'† P U P)` against the phase-aligned target.
    pub overlap: C64,
    /// Optimal free local phases (empty for a fixed target).
    pub chi: Vec<f64>,
    pub gradient: Option<ControlMatrix>,
    /// Projected propagator `P U P`.
    pub projected: CMatrix,
}

/// Evaluates `F` and, if requested, `∂F/∂u[m][r]`.
pub fn evaluate(problem: &GrapeProblem, controls: &ControlMatrix, with_gradient: bool) -> Result<Evaluation> {
    let sys = &problem.system;
    let grid = problem.grid;
    let record = propagate(sys, controls, grid)?;
    let comp = sys.comp_dim();
    let full = record.final_unitary(sys);
    let projected = full.view((0, 0), (comp, comp)).into_owned();
    let (target, chi) = problem.target.align(&projected);
    let overlap = trace_overlap(&target, &projected);
    let norm = (comp * comp) as f64;
    let fidelity = overlap.norm_sqr() / norm;
    if !with_gradient {
        return Ok(Evaluation { fidelity, overlap, chi, gradient: None, projected });
    }

    // T = Σ_c Tr(M_c U_c), with M_c summed over the blocks sharing class c
    let n_classes = sys.n_classes();
    let mut back: Vec<CMatrix> = (0..n_classes)
        .map(|c| {
            let n = sys.class_block(c).dim();
            CMatrix::zeros(n, n)
        })
        .collect();
    let mut active = vec![false; n_classes];
    for (b, block) in sys.blocks().iter().enumerate() {
        let c = sys.class_of(b);
        for (a, &i) in block.indices.iter().enumerate() {
            if i >= comp {
                continue;
            }
            for (cc, &j) in block.indices.iter().enumerate() {
                if j < comp {
                    back[c][(cc, a)] += target[(i, j)].conj();
                    active[c] = true;
                }
            }
        }
    }

    let dt = grid.dt();
    let n_controls = sys.n_controls();
    let scale = 2.0 / norm;
    let conj_overlap = overlap.conj();
    let mut grad = ControlMatrix::zeros(n_controls, grid.n_slices());
    for r in (0..grid.n_slices()).rev() {
        let t = grid.midpoint(r);
        for c in 0..n_classes {
            if !active[c] {
                continue;
            }
            let block = sys.class_block(c);
            let slice = record.slice(r, c);
            let v = &slice.eigen.vectors;
            // dT = Tr(dU_r · F_r · B), with F_r the product of earlier slices and B
            // the backward product M·U_N⋯U_{r+1}
            let k = record.forward(r, c) * &back[c];
            let kp = v.adjoint() * k * v;
            let g = slice.eigen.frechet_kernel(dt);
            let n = block.dim();
            let l = CMatrix::from_fn(n, n, |a, b| g[(a, b)] * kp[(b, a)]);
            let z = v.conjugate() * l * v.transpose();
            for (m, op) in block.sparse.iter().enumerate() {
                if op.is_zero() {
                    continue;
                }
                let dt_m = op.contract(&z, t);
                grad[(m, r)] += scale * (conj_overlap * dt_m).re;
            }
            back[c] = &back[c] * &slice.unitary;
        }
    }
    Ok(Evaluation { fidelity, overlap, chi, gradient: Some(grad), projected })
}

/// `F` and `∂F/∂u[m][r]` for per-slice controls.
pub fn fidelity_and_gradient(problem: &GrapeProblem, controls: &ControlMatrix) -> Result<(f64, ControlMatrix)> {
    let e = evaluate(problem, controls, true)?;
    Ok((e.fidelity, e.gradient.expect("gradient requested")))
}

/// `F` and its gradient with respect to Fourier coefficients, returned in the
/// same shape as the coefficients.
pub fn fourier_fidelity_and_gradient(
    problem: &GrapeProblem,
    fourier: &Fourier,
    params: &FourierParams,
) -> Result<(f64, FourierParams)> {
    let p = fourier.from_params(params)?;
    let param = Parametrization::Fourier(fourier.clone());
    let controls = param.controls(&p)?;
    let (f, g) = fidelity_and_gradient(problem, &controls)?;
    let gp = param.pullback(&p, &g)?;
    Ok((f, fourier.to_params(&gp)))
}

/// Starting point of an optimization.
#[derive(Clone, Debug)]
pub enum Init {
    Seed(u64),
    Params(Vec<f64>),
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationResult {
    pub params: Vec<f64>,
    #[serde(skip)]
    pub controls: ControlMatrix,
    pub fidelity: f64,
    pub chi: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub history: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub pulse: PulseSchedule,
}

fn check_param(problem: &GrapeProblem, param: &Parametrization) -> Result<()> {
    if param.n_tones() != problem.tones.len() {
        return Err(Error::DimensionMismatch { expected: problem.tones.len(), got: param.n_tones() });
    }
    if param.n_slices() != problem.grid.n_slices() {
        return Err(Error::DimensionMismatch { expected: problem.grid.n_slices(), got: param.n_slices() });
    }
    if param.caps().iter().zip(&problem.tones).any(|(a, t)| (a - t.cap).abs() > 1e-12 * t.cap) {
        return Err(Error::InvalidConfig("parametrization caps differ from the problem tones".into()));
    }
    if !param.bounded() && !param.needs_projection() {
        return Err(Error::InvalidConfig("unsaturated Fourier controls cannot enforce the amplitude cap".into()));
    }
    Ok(())
}

/// Single optimization run. Non-convergence is reported in the result.
pub fn optimize(problem: &GrapeProblem, param: &Parametrization, init: Init, opts: &AscentOptions) -> Result<OptimizationResult> {
    check_param(problem, param)?;
    let (x0, seed) = match init {
        Init::Seed(s) => (param.random_init(&mut stream(s, 0)), Some(s)),
        Init::Params(p) => (p, None),
    };
    let eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let u = param.controls(p)?;
        let (f, g) = fidelity_and_gradient(problem, &u)?;
        Ok((f, param.pullback(p, &g)?))
    };
    let scale = match param {
        Parametrization::PerSlice(ps) => ps.caps.iter().fold(0.0, |a: f64, &b| a.max(b)) / 2.0,
        _ => 1.0,
    };
    let out = if param.needs_projection() {
        maximize_projected(eval, |p: &mut [f64]| param.project(p), x0, scale, opts)?
    } else {
        maximize(eval, x0, scale, opts)?
    };
    finish(problem, param, out, seed)
}

fn finish(problem: &GrapeProblem, param: &Parametrization, out: AscentOutcome, seed: Option<u64>) -> Result<OptimizationResult> {
    let controls = param.controls(&out.x)?;
    let e = evaluate(problem, &controls, false)?;
    let mut pulse = PulseSchedule::from_controls(problem.tones.clone(), problem.grid, &controls)?;
    if let Parametrization::Fourier(f) = param {
        pulse.fourier = Some(f.to_params(&out.x));
    }
    Ok(OptimizationResult {
        params: out.x,
        controls,
        fidelity: e.fidelity,
        chi: e.chi,
        iterations: out.iterations,
        converged: out.stop.converged(),
        stop: out.stop,
        history: out.history,
        seed,
        pulse,
    })
}

/// Best of `restarts` seeded runs; restart `k` draws from stream `(seed, k)`.
/// Stops launching restarts once one reaches `opts.target`.
pub fn multi_start(
    problem: &GrapeProblem,
    param: &Parametrization,
    seed: u64,
    restarts: usize,
    opts: &AscentOptions,
) -> Result<OptimizationResult> {
    let mut best: Option<OptimizationResult> = None;
    for k in 0..restarts.max(1) {
        let s = derive_seed(seed, k as u64);
        let res = optimize(problem, param, Init::Seed(s), opts)?;
        let reached = opts.target.is_some_and(|t| res.fidelity >= t);
        if best.as_ref().is_none_or(|b| res.fidelity > b.fidelity) {
            best = Some(res);
        }
        if reached {
            break;
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    pub points: usize,
    pub refine_points: usize,
    pub threshold: f64,
    pub restarts: usize,
    pub seed: u64,
    pub ascent: AscentOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            points: 40,
            refine_points: 10,
            threshold: DEFAULT_THRESHOLD,
            restarts: 8,
            seed: 0,
            ascent: AscentOptions { max_iter: 400, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TimeScan {
    pub t_opt: f64,
    /// Coarse `(T, best F)` curve.
    pub curve: Vec<(f64, f64)>,
    /// Points evaluated while refining the transition.
    pub refined: Vec<(f64, f64)>,
    /// Optimized solution at `t_opt`, polished past the threshold.
    pub best: OptimizationResult,
}

/// Scans `T` over `[t_min, t_max]` and returns the smallest `T` whose
/// best-of-restarts fidelity reaches the threshold, refined once between
/// the last failing and first passing grid points.
pub fn find_optimal_time<B>(build: B, t_min: f64, t_max: f64, opts: &ScanOptions) -> Result<TimeScan>
where
    B: Fn(f64) -> Result<(GrapeProblem, Parametrization)> + Sync,
{
    if !(t_min > 0.0 && t_max > t_min) || opts.points < 2 {
        return Err(Error::InvalidConfig(format!("invalid scan range [{t_min}, {t_max}]")));
    }
    let mut ascent = opts.ascent;
    ascent.target = Some(opts.threshold);
    let run = |t: f64, key: u64| -> Result<OptimizationResult> {
        let (problem, param) = build(t)?;
        multi_start(&problem, &param, derive_seed(opts.seed, key), opts.restarts, &ascent)
    };
    let times: Vec<f64> =
        (0..opts.points).map(|i| t_min + (t_max - t_min) * i as f64 / (opts.points - 1) as f64).collect();
    let results: Vec<OptimizationResult> =
        times.par_iter().enumerate().map(|(i, &t)| run(t, i as u64)).collect::<Result<_>>()?;
    let curve: Vec<(f64, f64)> = times.iter().zip(&results).map(|(&t, r)| (t, r.fidelity)).collect();
    let first = curve
        .iter()
        .position(|&(_, f)| f >= opts.threshold)
        .ok_or_else(|| Error::BracketFailure(format!("no T in [{t_min:e}, {t_max:e}] reaches {}", opts.threshold)))?;
    if first == 0 {
        return Err(Error::BracketFailure(format!("fidelity already above threshold at T = {t_min:e}")));
    }
    let (lo, hi) = (times[first - 1], times[first]);
    let fine: Vec<f64> =
        (1..=opts.refine_points).map(|i| lo + (hi - lo) * i as f64 / (opts.refine_points + 1) as f64).collect();
    let fine_results: Vec<OptimizationResult> = fine
        .par_iter()
        .enumerate()
        .map(|(i, &t)| run(t, (opts.points + i) as u64))
        .collect::<Result<_>>()?;
    let refined: Vec<(f64, f64)> = fine.iter().zip(&fine_results).map(|(&t, r)| (t, r.fidelity)).collect();
    let (t_opt, seed_result) = match refined.iter().position(|&(_, f)| f >= opts.threshold) {
        Some(i) => (fine[i], fine_results[i].clone()),
        None => (hi, results[first].clone()),
    };
    // polish the passing solution without the early-stop target
    let (problem, param) = build(t_opt)?;
    let polished = optimize(&problem, &param, Init::Params(seed_result.params.clone()), &opts.ascent)?;
    let best = if polished.fidelity >= seed_result.fidelity { polished } else { seed_result };
    Ok(TimeScan { t_opt, curve, refined, best })
}
