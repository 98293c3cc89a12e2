//! Physical realization of a gate sequence on a two-atom pair: ideal
//! single-qudit stages interleaved with sampled Rydberg pulses.

use crate::algebra::{cis, CMatrix, CVector, QuditGate, C64};
use crate::compiler::{lower, sequence_to_unitary, GateSequence, Step};
use crate::dynamics::{ControlMatrix, ControlSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::grape::library::CrPulseLibrary;
use crate::hamiltonian::{two_atom_system, LevelScheme, TwoAtomBasis, TwoAtomConfig};

/// Controls for one entangling pulse on the physical pair.
#[derive(Clone, Debug)]
pub struct RealizedPulse {
    /// Rydberg slots driven, two control rows each, in this order.
    pub tones: Vec<usize>,
    pub controls: ControlMatrix,
    pub grid: TimeGrid,
    /// Local phase `χ_l` the pulse leaves on level `l` of each atom.
    pub level_phases: Vec<(usize, f64)>,
}

/// Supplies pulse realizations for `CR_S(θ)` steps.
pub trait PulseSource {
    fn realize(&self, scheme: &LevelScheme, targets: &[usize], theta: f64) -> Result<RealizedPulse>;
}

impl PulseSource for CrPulseLibrary {
    /// Same envelope on the tone of every target level.
    fn realize(&self, scheme: &LevelScheme, targets: &[usize], theta: f64) -> Result<RealizedPulse> {
        let pulse = self.get(theta)?;
        let base = pulse.schedule.controls();
        let grid = pulse.schedule.grid;
        let mut tones = Vec::with_capacity(targets.len());
        for &l in targets {
            let k = scheme
                .rydberg_for(l)
                .ok_or_else(|| Error::InvalidTones(format!("level {l} is not Rydberg-coupled")))?;
            tones.push(k);
        }
        let mut controls = ControlMatrix::zeros(2 * tones.len(), grid.n_slices());
        for j in 0..tones.len() {
            controls.row_mut(2 * j).copy_from(&base.row(0));
            controls.row_mut(2 * j + 1).copy_from(&base.row(1));
        }
        let level_phases = targets.iter().map(|&l| (l, pulse.chi)).collect();
        Ok(RealizedPulse { tones, controls, grid, level_phases })
    }
}

/// Sparse Hermitian term on a fixed pattern.
#[derive(Clone, Debug)]
struct Term {
    fixed: Vec<(usize, C64)>,
    /// Pattern positions of the raising part and of its adjoint, with value.
    raising: Vec<(usize, usize, C64)>,
    frequency: f64,
}

/// One entangling pulse compiled for trajectory propagation.
#[derive(Clone, Debug)]
pub struct PulseStage {
    pub label: String,
    pub grid: TimeGrid,
    pattern: Vec<(usize, usize)>,
    drift: Vec<C64>,
    terms: Vec<Term>,
    controls: ControlMatrix,
}

impl PulseStage {
    fn new(label: String, system: &ControlSystem, pulse: &RealizedPulse) -> Self {
        let dim = system.dim();
        let mut slot = vec![usize::MAX; dim * dim];
        let mut pattern = Vec::new();
        let mut index = |i: usize, j: usize, pattern: &mut Vec<(usize, usize)>| {
            let s = &mut slot[i * dim + j];
            if *s == usize::MAX {
                *s = pattern.len();
                pattern.push((i, j));
            }
            *s
        };
        let nonzero = |m: &CMatrix| {
            let mut out = Vec::new();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    if m[(i, j)].norm_sqr() > 0.0 {
                        out.push((i, j, m[(i, j)]));
                    }
                }
            }
            out
        };
        let drift_entries: Vec<(usize, C64)> =
            nonzero(system.drift()).into_iter().map(|(i, j, v)| (index(i, j, &mut pattern), v)).collect();
        let mut terms = Vec::with_capacity(system.n_controls());
        for op in system.controls() {
            let fixed = nonzero(&op.fixed).into_iter().map(|(i, j, v)| (index(i, j, &mut pattern), v)).collect();
            let (raising, frequency) = match &op.rotating {
                None => (Vec::new(), 0.0),
                Some(rot) => (
                    nonzero(&rot.raising)
                        .into_iter()
                        .map(|(i, j, v)| (index(i, j, &mut pattern), index(j, i, &mut pattern), v))
                        .collect(),
                    rot.frequency,
                ),
            };
            terms.push(Term { fixed, raising, frequency });
        }
        let mut drift = vec![C64::new(0.0, 0.0); pattern.len()];
        for (p, v) in drift_entries {
            drift[p] += v;
        }
        Self { label, grid: pulse.grid, pattern, drift, terms, controls: pulse.controls.clone() }
    }

    pub fn duration(&self) -> f64 {
        self.grid.duration()
    }

    /// Hermitian part of the Hamiltonian at time `t` in slice `r`, with the
    /// drive scaled by `scale`, as values on the stage pattern.
    fn values(&self, r: usize, t: f64, scale: f64, out: &mut [C64]) {
        out.copy_from_slice(&self.drift);
        for (m, term) in self.terms.iter().enumerate() {
            let u = self.controls[(m, r)] * scale;
            if u == 0.0 {
                continue;
            }
            for &(p, v) in &term.fixed {
                out[p] += v * u;
            }
            if !term.raising.is_empty() {
                let w = cis(term.frequency * t) * u;
                for &(p, q, v) in &term.raising {
                    out[p] += v * w;
                    out[q] += (v * w).conj();
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Stage {
    /// Instantaneous ideal operation on the full pair space.
    Unitary(CMatrix),
    Pulse(Box<PulseStage>),
}

/// Gate sequence lowered onto a physical pair, ready for trajectories.
#[derive(Clone, Debug)]
pub struct Program {
    pub config: TwoAtomConfig,
    pub basis: TwoAtomBasis,
    pub stages: Vec<Stage>,
    /// Ideal action on the computational subspace.
    pub ideal: QuditGate,
    rydberg_count: Vec<f64>,
}

/// `U ⊕ I` on one atom's levels, with identity on the Rydberg levels.
fn extend(gate: &CMatrix, single_dim: usize) -> CMatrix {
    let d = gate.nrows();
    let mut out = CMatrix::identity(single_dim, single_dim);
    out.view_mut((0, 0), (d, d)).copy_from(gate);
    out
}

fn level_phase_matrix(single_dim: usize, phases: &[(usize, f64)]) -> CMatrix {
    let mut out = CMatrix::identity(single_dim, single_dim);
    for &(l, chi) in phases {
        out[(l, l)] *= cis(chi);
    }
    out
}

impl Program {
    /// Lowers `seq` onto the scheme of `config` and attaches pulses from
    /// `source`. Local phases left by each pulse are undone by an ideal
    /// frame update right after it.
    pub fn new(seq: &GateSequence, config: &TwoAtomConfig, source: &dyn PulseSource) -> Result<Self> {
        let scheme = &config.scheme;
        let lowered = lower(seq, scheme, None)?;
        let ideal = sequence_to_unitary(&lowered)?;
        let basis = config.basis();
        let n = scheme.single_dim();
        let mut stages: Vec<Stage> = Vec::new();
        let push_unitary = |stages: &mut Vec<Stage>, m: CMatrix| {
            if let Some(Stage::Unitary(prev)) = stages.last_mut() {
                *prev = &m * &*prev;
            } else {
                stages.push(Stage::Unitary(m));
            }
        };
        for step in &lowered.steps {
            match step {
                Step::Single { gate } => {
                    let e = extend(gate.matrix(), n);
                    push_unitary(&mut stages, basis.lift_product(&e, &e));
                }
                Step::Virtual { level, theta } => {
                    let e = level_phase_matrix(n, &[(*level, *theta)]);
                    push_unitary(&mut stages, basis.lift_product(&e, &e));
                }
                Step::Cr { targets, theta, .. } => {
                    let pulse = source.realize(scheme, targets, *theta)?;
                    let system = two_atom_system(config, &pulse.tones)?;
                    if pulse.controls.nrows() != system.n_controls() {
                        return Err(Error::DimensionMismatch { expected: system.n_controls(), got: pulse.controls.nrows() });
                    }
                    let label = format!("CR{targets:?}({theta:.4})");
                    stages.push(Stage::Pulse(Box::new(PulseStage::new(label, &system, &pulse))));
                    if !pulse.level_phases.is_empty() {
                        let undo: Vec<(usize, f64)> = pulse.level_phases.iter().map(|&(l, c)| (l, -c)).collect();
                        let e = level_phase_matrix(n, &undo);
                        push_unitary(&mut stages, basis.lift_product(&e, &e));
                    }
                }
            }
        }
        let rydberg_count = basis.rydberg_count().into_iter().map(|c| c as f64).collect();
        Ok(Self { config: config.clone(), basis, stages, ideal, rydberg_count })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn pulses(&self) -> impl Iterator<Item = &PulseStage> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Pulse(p) => Some(p.as_ref()),
            Stage::Unitary(_) => None,
        })
    }

    /// Number of Rydberg atoms in each basis state.
    pub fn rydberg_count(&self) -> &[f64] {
        &self.rydberg_count
    }

    /// Uniform superposition of all computational pairs, embedded in the pair space.
    pub fn uniform_input(&self) -> CVector {
        let d = self.basis.d();
        let mut psi = CVector::zeros(self.dim());
        for i in 0..d * d {
            psi[i] = C64::new(1.0 / d as f64, 0.0);
        }
        psi
    }

    /// Ideal output for a computational input embedded in the pair space.
    pub fn ideal_output(&self, psi: &CVector) -> CVector {
        let comp = self.basis.comp_dim();
        let u = self.ideal.matrix();
        let mut out = CVector::zeros(self.dim());
        for i in 0..comp {
            out[i] = (0..comp).map(|j| u[(i, j)] * psi[j]).sum();
        }
        out
    }
}

/// Per-shot constants of the effective Hamiltonian.
#[derive(Clone, Copy, Debug)]
pub struct Perturbation {
    pub amplitude_scale: f64,
    /// Shift of every Rydberg level, rad/s.
    pub detuning: f64,
    /// Total decay rate of one Rydberg atom, 1/s.
    pub decay_rate: f64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation { amplitude_scale: 1.0, detuning: 0.0, decay_rate: 0.0 };
}

/// Taylor expansion of `e^{−iH dt}` applied to vectors of one pulse stage.
pub(crate) struct Stepper<'a> {
    stage: &'a PulseStage,
    diag: Vec<C64>,
    values: Vec<C64>,
    term: CVector,
    next: CVector,
    col: Vec<f64>,
}

const TAYLOR_TOL: f64 = 1e-15;
/// Largest `‖H‖₁·dt` per Taylor substep.
const TAYLOR_STEP: f64 = 0.5;

impl<'a> Stepper<'a> {
    pub(crate) fn new(stage: &'a PulseStage, program: &Program, shot: Perturbation) -> Self {
        let shift = C64::new(shot.detuning, -0.5 * shot.decay_rate);
        let diag = program.rydberg_count.iter().map(|&n| shift * n).collect();
        let dim = program.dim();
        Self {
            stage,
            diag,
            values: vec![C64::new(0.0, 0.0); stage.pattern.len()],
            term: CVector::zeros(dim),
            next: CVector::zeros(dim),
            col: vec![0.0; dim],
        }
    }

    fn apply_h(&mut self) {
        for (z, (d, x)) in self.next.iter_mut().zip(self.diag.iter().zip(self.term.iter())) {
            *z = d * x;
        }
        for (&(i, j), v) in self.stage.pattern.iter().zip(&self.values) {
            self.next[i] += v * self.term[j];
        }
    }

    /// Advances `psi` through slice `r`, split into `substeps` parts.
    pub(crate) fn slice(&mut self, psi: &mut CVector, r: usize, substeps: usize, scale: f64) {
        let dt = self.stage.grid.dt() / substeps as f64;
        let t0 = self.stage.grid.start(r);
        for s in 0..substeps {
            self.stage.values(r, t0 + (s as f64 + 0.5) * dt, scale, &mut self.values);
            self.col.iter_mut().for_each(|c| *c = 0.0);
            for (&(_, j), v) in self.stage.pattern.iter().zip(&self.values) {
                self.col[j] += v.norm();
            }
            let bound = self.col.iter().zip(&self.diag).map(|(c, d)| c + d.norm()).fold(0.0, f64::max) * dt;
            let pieces = ((bound / TAYLOR_STEP).ceil() as usize).max(1);
            let h = dt / pieces as f64;
            for _ in 0..pieces {
                self.term.copy_from(psi);
                for k in 1..=60 {
                    self.apply_h();
                    let factor = C64::new(0.0, -h / k as f64);
                    let mut size: f64 = 0.0;
                    for (t, n) in self.term.iter_mut().zip(self.next.iter()) {
                        *t = n * factor;
                        size = size.max(t.norm_sqr());
                    }
                    *psi += &self.term;
                    if size < TAYLOR_TOL * TAYLOR_TOL {
                        break;
                    }
                }
            }
        }
    }
}

/// Deterministic evolution of `psi` through the whole program under a fixed
/// perturbation, without jumps. Also returns `∫⟨N_ryd⟩dt` for every pulse
/// stage, sampled at slice midpoints of the unnormalized state.
pub fn evolve(program: &Program, psi: &CVector, shot: Perturbation, substeps: usize) -> (CVector, Vec<f64>) {
    let mut psi = psi.clone();
    let mut exposure = Vec::new();
    for stage in &program.stages {
        match stage {
            Stage::Unitary(u) => psi = u * &psi,
            Stage::Pulse(p) => {
                let mut stepper = Stepper::new(p, program, shot);
                let mut acc = 0.0;
                let dt = p.grid.dt();
                for r in 0..p.grid.n_slices() {
                    let before = rydberg_population(program, &psi);
                    stepper.slice(&mut psi, r, substeps, shot.amplitude_scale);
                    acc += 0.5 * (before + rydberg_population(program, &psi)) * dt;
                }
                exposure.push(acc);
            }
        }
    }
    (psi, exposure)
}

pub(crate) fn rydberg_population(program: &Program, psi: &CVector) -> f64 {
    psi.iter().zip(&program.rydberg_count).map(|(z, n)| z.norm_sqr() * n).sum()
}
