//! CZ compilation from controlled-phase pulses and single-qudit gates.
//!
//! A `CR_S(θ)` pulse adds `θ` to every pair `(j, m)` with both levels in `S`,
//! so a diagonal symmetric two-qudit target reduces to a linear system for the
//! pulse angles modulo 2π. The helpers here build, lower and verify such
//! sequences, and certify when no single-coupled-level sequence can work.

mod lie;
mod modular;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use lie::{chain_generators, lie_closure_dimension};
pub use modular::{diagonalize, solve_mod_2pi, Diagonalization, IntMatrix};

use crate::algebra::{cis, cr, is_trivial_angle, phase_gate, pauli_x, wrap_angle, CMatrix, QuditGate, QuditSpace, C64};
use crate::error::{Error, Result};
use crate::hamiltonian::LevelScheme;

pub const SEQUENCE_SCHEMA_VERSION: u32 = 1;

/// Residual below which a fitted additive phase structure is accepted.
pub const ADDITIVE_TOL: f64 = 1e-9;

/// Off-diagonal magnitude below which a sequence counts as diagonal.
pub const DIAGONAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Step {
    /// The same single-qudit gate on both atoms.
    Single { gate: QuditGate },
    /// Zero-duration frame update `e^{iθ}` on `level` of both atoms.
    Virtual { level: usize, theta: f64 },
    /// Entangling pulse. `chi` is the local phase the physical pulse leaves on
    /// each target level, when known; it is part of the step's action.
    Cr {
        targets: Vec<usize>,
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chi: Option<f64>,
    },
}

impl Step {
    pub fn cr(targets: &[usize], theta: f64) -> Self {
        Step::Cr { targets: targets.to_vec(), theta: wrap_angle(theta), chi: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSequence {
    pub d: usize,
    pub steps: Vec<Step>,
}

#[derive(Serialize, Deserialize)]
struct SequenceJson {
    schema_version: u32,
    d: usize,
    steps: Vec<Step>,
}

impl GateSequence {
    pub fn new(d: usize) -> Self {
        Self { d, steps: Vec::new() }
    }

    pub fn space(&self) -> Result<QuditSpace> {
        QuditSpace::new(self.d)
    }

    /// Number of entangling pulses.
    pub fn pulse_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Cr { .. })).count()
    }

    /// Pulses weighted by their tone count.
    pub fn weighted_pulse_count(&self) -> usize {
        self.steps.iter().map(|s| if let Step::Cr { targets, .. } = s { targets.len() } else { 0 }).sum()
    }

    pub fn cr_steps(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.steps.iter().filter_map(|s| match s {
            Step::Cr { targets, theta, .. } => Some((targets.as_slice(), *theta)),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.space()?;
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Single { gate } => {
                    if gate.dim() != self.d {
                        return Err(Error::MalformedSequence(format!(
                            "step {i}: single-qudit gate of dimension {} in a d = {} sequence",
                            gate.dim(),
                            self.d
                        )));
                    }
                    if !gate.is_unitary() {
                        return Err(Error::MalformedSequence(format!("step {i}: gate is not unitary")));
                    }
                }
                Step::Virtual { level, theta } => {
                    if *level >= self.d {
                        return Err(Error::LevelOutOfRange { level: *level, dim: self.d });
                    }
                    if !theta.is_finite() {
                        return Err(Error::NonFinite("virtual phase"));
                    }
                }
                Step::Cr { targets, theta, chi } => {
                    crate::algebra::validate_targets(space, targets)?;
                    if !theta.is_finite() || chi.is_some_and(|c| !c.is_finite()) {
                        return Err(Error::NonFinite("pulse angle"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = SequenceJson { schema_version: SEQUENCE_SCHEMA_VERSION, d: self.d, steps: self.steps.clone() };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SequenceJson = serde_json::from_str(text)?;
        if raw.schema_version != SEQUENCE_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported sequence schema version {}", raw.schema_version)));
        }
        let seq = Self { d: raw.d, steps: raw.steps };
        seq.validate()?;
        Ok(seq)
    }
}

/// Symmetric table of CZ pulse angles `θ_{j,m}`, `1 ≤ j, m ≤ d−1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMatrix {
    pub d: usize,
    theta: Vec<f64>,
}

impl PhaseMatrix {
    /// `θ_{j,m}` with 1-based levels.
    pub fn get(&self, j: usize, m: usize) -> f64 {
        assert!((1..self.d).contains(&j) && (1..self.d).contains(&m), "levels must lie in 1..d");
        self.theta[(j - 1) * (self.d - 1) + (m - 1)]
    }
}

/// `θ_{j,m} = (2π/d)·jm + [(2π/d)·j² − πj(d−1)]·δ_{jm}`, wrapped.
pub fn cz_phase_matrix(d: usize) -> Result<PhaseMatrix> {
    QuditSpace::new(d)?;
    let n = d - 1;
    let mut theta = vec![0.0; n * n];
    let unit = std::f64::consts::TAU / d as f64;
    for j in 1..d {
        for m in 1..d {
            let (jf, mf) = (j as f64, m as f64);
            let mut t = unit * jf * mf;
            if j == m {
                t += unit * jf * jf - std::f64::consts::PI * jf * (d as f64 - 1.0);
            }
            theta[(j - 1) * n + (m - 1)] = wrap_angle(t);
        }
    }
    Ok(PhaseMatrix { d, theta })
}

/// Single-tone pulses `CR_{j}(θ_{j,j})`, then two-tone `CR_{j,m}(θ_{j,m})`,
/// with trivial angles dropped.
pub fn compile_cz(d: usize) -> Result<GateSequence> {
    let phases = cz_phase_matrix(d)?;
    let mut seq = GateSequence::new(d);
    for j in 1..d {
        let t = phases.get(j, j);
        if !is_trivial_angle(t) {
            seq.steps.push(Step::cr(&[j], t));
        }
    }
    for j in 1..d {
        for m in j + 1..d {
            let t = phases.get(j, m);
            if !is_trivial_angle(t) {
                seq.steps.push(Step::cr(&[j, m], t));
            }
        }
    }
    Ok(seq)
}

/// Qutrit CZ with one Rydberg-coupled level: `[X⊗X, CR_{2}(4π/3)]×3`, then
/// `R₀(2π/3)⊗R₀(2π/3)`.
pub fn compile_cz_qutrit_single_rydberg() -> GateSequence {
    let space = QuditSpace::new(3).expect("d = 3");
    let x = pauli_x(space);
    let mut seq = GateSequence::new(3);
    for _ in 0..3 {
        seq.steps.push(Step::Single { gate: x.clone() });
        seq.steps.push(Step::cr(&[2], 4.0 * std::f64::consts::PI / 3.0));
    }
    let r0 = phase_gate(space, 0, 2.0 * std::f64::consts::PI / 3.0).expect("level 0 exists");
    seq.steps.push(Step::Single { gate: r0 });
    seq
}

/// Local diagonal `e^{iχ}` on each listed level.
fn level_phases(d: usize, levels: &[usize], chi: f64) -> QuditGate {
    let phases: Vec<C64> = (0..d).map(|k| if levels.contains(&k) { cis(chi) } else { C64::new(1.0, 0.0) }).collect();
    QuditGate::from_diagonal(&phases)
}

/// Ideal action of a sequence on the two-qudit space.
pub fn sequence_to_unitary(seq: &GateSequence) -> Result<QuditGate> {
    seq.validate()?;
    let space = seq.space()?;
    let d = seq.d;
    let mut total = QuditGate::identity(d * d);
    for step in &seq.steps {
        let u = match step {
            Step::Single { gate } => gate.tensor(gate),
            Step::Virtual { level, theta } => {
                let g = level_phases(d, &[*level], *theta);
                g.tensor(&g)
            }
            Step::Cr { targets, theta, chi } => {
                let ideal = cr(space, targets, *theta)?;
                match chi {
                    Some(c) => {
                        let g = level_phases(d, targets, *c);
                        g.tensor(&g).compose(&ideal)?
                    }
                    None => ideal,
                }
            }
        };
        total = u.compose(&total)?;
    }
    Ok(total)
}

/// Max entrywise deviation after dividing out the phase of the `|0,0⟩` entry.
pub fn deviation_aligned(a: &QuditGate, b: &QuditGate) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let pa = a.matrix()[(0, 0)];
    let pb = b.matrix()[(0, 0)];
    if pa.norm() < 1e-12 || pb.norm() < 1e-12 {
        return Ok(f64::INFINITY);
    }
    let ra = pa.conj() / pa.norm();
    let rb = pb.conj() / pb.norm();
    Ok((a.matrix() * ra - b.matrix() * rb).iter().fold(0.0, |m, z| m.max(z.norm())))
}

/// Nonempty subsets of `1..d` with at most `max_size` elements, by size then
/// lexicographically.
fn tone_subsets(d: usize, max_size: usize) -> Vec<Vec<usize>> {
    let levels: Vec<usize> = (1..d).collect();
    let mut out = Vec::new();
    for size in 1..=max_size.min(levels.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| levels[i]).collect());
            let mut k = size;
            while k > 0 && idx[k - 1] == levels.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for t in k..size {
                idx[t] = idx[t - 1] + 1;
            }
        }
    }
    out
}

/// Rows `(j, m)`, `1 ≤ j ≤ m ≤ d−1`, and the CZ right-hand side in units of 2π/d.
fn cz_pairs(d: usize) -> (Vec<(usize, usize)>, Vec<i64>) {
    let mut pairs = Vec::new();
    let mut q = Vec::new();
    for j in 1..d {
        for m in j..d {
            pairs.push((j, m));
            q.push(((j * m) % d) as i64);
        }
    }
    (pairs, q)
}

/// Upper bound on the number of candidate supports examined.
pub const SEARCH_BUDGET: u64 = 20_000_000;

/// Fewest pulses realizing CZ when up to `max_tones` Rydberg tones may be
/// driven at once. Ties go to fewer total tones, then to the earliest support.
pub fn minimize_pulse_count(d: usize, max_tones: usize) -> Result<GateSequence> {
    QuditSpace::new(d)?;
    if max_tones == 0 || max_tones > d - 1 {
        return Err(Error::InvalidConfig(format!("max simultaneous tones must lie in 1..={}", d - 1)));
    }
    let subsets = tone_subsets(d, max_tones);
    let (pairs, q) = cz_pairs(d);
    if q.iter().all(|&x| x == 0) {
        return Ok(GateSequence::new(d));
    }
    let columns: Vec<Vec<i64>> = subsets
        .iter()
        .map(|s| pairs.iter().map(|(j, m)| (s.contains(j) && s.contains(m)) as i64).collect())
        .collect();
    let budget_pulses = pairs.len();
    let mut examined = 0u64;
    for m in 1..=budget_pulses.min(subsets.len()) {
        let mut best: Option<(usize, Vec<usize>, Vec<f64>)> = None;
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            examined += 1;
            if examined > SEARCH_BUDGET {
                return Err(Error::Infeasible(format!("search budget exhausted at {m} pulses")));
            }
            let tones: usize = idx.iter().map(|&i| subsets[i].len()).sum();
            if best.as_ref().is_none_or(|(t, _, _)| tones < *t) {
                let rows: Vec<Vec<i64>> = (0..pairs.len()).map(|r| idx.iter().map(|&c| columns[c][r]).collect()).collect();
                if let Some(theta) = solve_mod_2pi(&IntMatrix::from_rows(&rows), &q, d as i64) {
                    if theta.iter().all(|t| !is_trivial_angle(*t)) {
                        best = Some((tones, idx.clone(), theta));
                    }
                }
            }
            let mut k = m;
            while k > 0 && idx[k - 1] == subsets.len() - m + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for t in k..m {
                idx[t] = idx[t - 1] + 1;
            }
        }
        if let Some((_, idx, theta)) = best {
            let mut seq = GateSequence::new(d);
            for (i, t) in idx.iter().zip(theta) {
                seq.steps.push(Step::cr(&subsets[*i], t));
            }
            return Ok(seq);
        }
    }
    Err(Error::Infeasible(format!("no CZ sequence for d = {d} with at most {max_tones} tones per pulse")))
}

/// Maps target sets onto the levels a scheme couples to Rydberg states.
///
/// Pulses whose targets are not all coupled are conjugated by a level
/// permutation built from transpositions with coupled levels. When `chi` is
/// given, each pulse carries its local phase and is followed by virtual
/// phases cancelling it.
pub fn lower(seq: &GateSequence, scheme: &LevelScheme, chi: Option<&dyn Fn(f64) -> Result<f64>>) -> Result<GateSequence> {
    seq.validate()?;
    if scheme.d() != seq.d {
        return Err(Error::DimensionMismatch { expected: seq.d, got: scheme.d() });
    }
    let d = seq.d;
    let coupled = scheme.couplings();
    let mut out = GateSequence::new(d);
    for step in &seq.steps {
        let Step::Cr { targets, theta, .. } = step else {
            out.steps.push(step.clone());
            continue;
        };
        if targets.len() > coupled.len() {
            return Err(Error::InvalidTones(format!(
                "pulse on {targets:?} needs {} Rydberg levels, scheme has {}",
                targets.len(),
                coupled.len()
            )));
        }
        // perm[k] = physical level holding logical level k
        let mut perm: Vec<usize> = (0..d).collect();
        let mut free: Vec<usize> = coupled.iter().copied().filter(|c| !targets.contains(c)).collect();
        for &t in targets {
            if !coupled.contains(&t) {
                let c = free.remove(0);
                perm.swap(t, c);
            }
        }
        let physical: Vec<usize> = targets.iter().map(|&t| perm[t]).collect();
        let moved = perm.iter().enumerate().any(|(k, &p)| k != p);
        let p_gate = permutation_gate(&perm);
        if moved {
            push_single(&mut out, p_gate.clone());
        }
        let pulse_chi = match chi {
            Some(f) => Some(f(*theta)?),
            None => None,
        };
        out.steps.push(Step::Cr { targets: physical.clone(), theta: *theta, chi: pulse_chi });
        if let Some(c) = pulse_chi {
            for &l in &physical {
                out.steps.push(Step::Virtual { level: l, theta: wrap_angle(-c) });
            }
        }
        if moved {
            push_single(&mut out, p_gate.dagger());
        }
    }
    Ok(out)
}

/// Appends a single-qudit gate, merging it into a directly preceding one.
fn push_single(seq: &mut GateSequence, gate: QuditGate) {
    if let Some(Step::Single { gate: prev }) = seq.steps.last_mut() {
        let merged = gate.compose(prev).expect("same dimension");
        if merged.max_abs_diff(&QuditGate::identity(merged.dim())) < 1e-14 {
            seq.steps.pop();
        } else {
            *prev = merged;
        }
        return;
    }
    seq.steps.push(Step::Single { gate });
}

/// `|perm[k]⟩⟨k|`.
fn permutation_gate(perm: &[usize]) -> QuditGate {
    let d = perm.len();
    let mut m = CMatrix::zeros(d, d);
    for (k, &p) in perm.iter().enumerate() {
        m[(p, k)] = C64::new(1.0, 0.0);
    }
    QuditGate::new(m).expect("permutation matrices are unitary")
}

/// Outcome of checking the additive phase structure of a sequence that
/// drives a single Rydberg-coupled level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoGoVerdict {
    pub diagonal: bool,
    /// Fitted `ξ_j` with `U|j,m⟩ = e^{i(ξ_j+ξ_m)}|j,m⟩` for `j ≠ m`.
    pub xi: Vec<f64>,
    pub residual: f64,
    pub additive: bool,
}

/// Evaluates a single-coupled-level sequence and tests whether its action on
/// states with distinct levels is additive, `e^{i(ξ_j+ξ_m)}`.
pub fn verify_no_go_structure(seq: &GateSequence) -> Result<NoGoVerdict> {
    let mut level = None;
    for (targets, _) in seq.cr_steps() {
        if targets.len() != 1 || level.is_some_and(|l| l != targets[0]) {
            return Err(Error::MalformedSequence("pulses must all drive the same single Rydberg-coupled level".into()));
        }
        level = Some(targets[0]);
    }
    let u = sequence_to_unitary(seq)?;
    let d = seq.d;
    let m = u.matrix();
    let off = (0..d * d)
        .flat_map(|i| (0..d * d).filter(move |&j| j != i).map(move |j| (i, j)))
        .fold(0.0, |acc: f64, (i, j)| acc.max(m[(i, j)].norm()));
    if off > DIAGONAL_TOL {
        return Ok(NoGoVerdict { diagonal: false, xi: Vec::new(), residual: off, additive: false });
    }
    let phase = |j: usize, k: usize| m[(j * d + k, j * d + k)].arg();
    let mut xi = vec![0.0; d];
    if d >= 3 {
        xi[0] = 0.5 * (phase(0, 1) + phase(0, 2) - phase(1, 2));
    }
    for k in 1..d {
        xi[k] = wrap_angle(phase(0, k) - xi[0]);
    }
    xi[0] = wrap_angle(xi[0]);
    let mut residual: f64 = 0.0;
    for j in 0..d {
        for k in 0..d {
            if j != k {
                residual = residual.max((m[(j * d + k, j * d + k)] - cis(xi[j] + xi[k])).norm());
            }
        }
    }
    Ok(NoGoVerdict { diagonal: true, xi, residual, additive: residual < ADDITIVE_TOL })
}

/// Whether `ξ_j + ξ_m − φ ≡ 2πjm/d (mod 2π)` for all `j < m` has a real
/// solution `(ξ, φ)`: the phases any single-coupled-level sequence with
/// diagonal outcome can put on states with distinct levels, against CZ.
pub fn cz_additive_solution(d: usize) -> Result<Option<Vec<f64>>> {
    QuditSpace::new(d)?;
    let mut rows = Vec::new();
    let mut q = Vec::new();
    for j in 0..d {
        for m in j + 1..d {
            let mut row = vec![0i64; d + 1];
            row[j] += 1;
            row[m] += 1;
            row[d] = -1;
            rows.push(row);
            q.push(((j * m) % d) as i64);
        }
    }
    Ok(solve_mod_2pi(&IntMatrix::from_rows(&rows), &q, d as i64))
}

/// Random sequence of diagonal single-qudit gates and single-level pulses on
/// level `level`, with up to `max_segments` pulses.
pub fn random_diagonal_family<R: Rng>(rng: &mut R, d: usize, level: usize, max_segments: usize) -> GateSequence {
    let mut seq = GateSequence::new(d);
    let n = rng.random_range(1..=max_segments.max(1));
    for _ in 0..n {
        let phases: Vec<C64> = (0..d).map(|_| cis(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))).collect();
        seq.steps.push(Step::Single { gate: QuditGate::from_diagonal(&phases) });
        seq.steps.push(Step::cr(&[level], rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)));
    }
    seq
}

#[cfg(test)]
mod tests;
