//! Dense qudit linear algebra: elementary gates, the conditional-phase
//! family and the averaged gate fidelity.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance used when comparing angles modulo 2π.
pub const ANGLE_TOL: f64 = 1e-9;

/// Frobenius tolerance per unit dimension for unitarity checks.
pub const UNITARY_TOL: f64 = 1e-10;

/// Wraps an angle into the principal branch (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    // rem_euclid maps -π to π already; guard the rounding edge on the other side
    if t <= -PI {
        t += TAU;
    }
    t
}

/// True when two angles agree modulo 2π within [`ANGLE_TOL`].
pub fn angles_equiv(a: f64, b: f64) -> bool {
    wrap_angle(a - b).abs() < ANGLE_TOL
}

/// True when an angle is a multiple of 2π within [`ANGLE_TOL`].
pub fn is_trivial_angle(theta: f64) -> bool {
    angles_equiv(theta, 0.0)
}

pub(crate) fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Kronecker product of two dense complex matrices.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Local qudit dimension together with its root of unity ω = e^{2πi/d}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuditSpace {
    d: usize,
}

impl QuditSpace {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidConfig(format!("qudit dimension must be >= 2, got {d}")));
        }
        Ok(Self { d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn omega(&self) -> C64 {
        cis(TAU / self.d as f64)
    }

    /// ω^k, reduced modulo d before exponentiation so large products stay exact.
    pub fn omega_pow(&self, k: usize) -> C64 {
        cis(TAU * (k % self.d) as f64 / self.d as f64)
    }
}

/// A square complex matrix acting on a labelled level space.
#[derive(Clone, PartialEq)]
pub struct QuditGate {
    matrix: CMatrix,
}

impl fmt::Debug for QuditGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuditGate").field("dim", &self.dim()).finish()
    }
}

impl QuditGate {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: matrix.ncols() });
        }
        Ok(Self { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(phases: &[C64]) -> Self {
        Self { matrix: CMatrix::from_diagonal(&CVector::from_column_slice(phases)) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self { matrix: self.matrix.adjoint() }
    }

    /// Matrix product `self · rhs` (rhs acts first).
    pub fn compose(&self, rhs: &QuditGate) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: rhs.dim() });
        }
        Ok(Self { matrix: &self.matrix * &rhs.matrix })
    }

    pub fn tensor(&self, rhs: &QuditGate) -> Self {
        Self { matrix: kron(&self.matrix, &rhs.matrix) }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = CMatrix::identity(self.dim(), self.dim());
        for _ in 0..n {
            out = &out * &self.matrix;
        }
        Self { matrix: out }
    }

    /// Unitarity to a Frobenius tolerance of `1e-10 · dim`.
    pub fn is_unitary(&self) -> bool {
        let n = self.dim();
        let err = (self.matrix.adjoint() * &self.matrix - CMatrix::identity(n, n)).norm();
        err < UNITARY_TOL * n as f64
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)].norm() < tol))
    }

    /// Largest entrywise deviation between `self` and `other` after removing
    /// the global phase fixed by the (0,0) entries.
    pub fn deviation_up_to_phase(&self, other: &QuditGate) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let align = |m: &CMatrix| {
            let p = m[(0, 0)];
            if p.norm() > 1e-12 {
                m.map(|z| z * (p.conj() / p.norm()))
            } else {
                m.clone()
            }
        };
        let a = align(&self.matrix);
        let b = align(&other.matrix);
        Ok((a - b).iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    pub fn max_abs_diff(&self, other: &QuditGate) -> f64 {
        (&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: state.dim() });
        }
        Ok(StateVector { amplitudes: &self.matrix * &state.amplitudes })
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    dim: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for QuditGate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.matrix[(i, j)];
                entries.push([z.re, z.im]);
            }
        }
        MatrixJson { dim: n, entries }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QuditGate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(deserializer)?;
        if raw.entries.len() != raw.dim * raw.dim {
            return Err(serde::de::Error::custom(format!(
                "expected {} entries for dim {}, found {}",
                raw.dim * raw.dim,
                raw.dim,
                raw.entries.len()
            )));
        }
        let matrix = CMatrix::from_row_iterator(
            raw.dim,
            raw.dim,
            raw.entries.iter().map(|[re, im]| C64::new(*re, *im)),
        );
        Ok(QuditGate { matrix })
    }
}

/// Complex amplitudes over a level space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::LevelOutOfRange { level: k, dim });
        }
        let mut v = CVector::zeros(dim);
        v[k] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: v })
    }

    /// Product state (Σ_j |j⟩/√d)^{⊗n} over the computational levels.
    pub fn uniform_product(space: QuditSpace, n_qudits: u32) -> Self {
        let dim = space.d().pow(n_qudits);
        let a = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self { amplitudes: CVector::from_element(dim, a) }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut CVector {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn normalized(&self) -> Self {
        let n = self.amplitudes.norm();
        Self { amplitudes: self.amplitudes.unscale(n) }
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// Pads the state with zero amplitudes up to `dim` levels.
    pub fn embed(&self, dim: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v.rows_mut(0, self.dim()).copy_from(&self.amplitudes);
        Self { amplitudes: v }
    }
}

/// Generalised Pauli shift, X|j⟩ = |j+1 mod d⟩.
pub fn pauli_x(space: QuditSpace) -> QuditGate {
    let d = space.d();
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[((j + 1) % d, j)] = C64::new(1.0, 0.0);
    }
    QuditGate { matrix: m }
}

/// Generalised Pauli clock, Z|j⟩ = ω^j|j⟩.
pub fn pauli_z(space: QuditSpace) -> QuditGate {
    let phases: Vec<C64> = (0..space.d()).map(|j| space.omega_pow(j)).collect();
    QuditGate::from_diagonal(&phases)
}

/// Qudit Fourier gate, H|j⟩ = d^{-1/2} Σ_k ω^{jk}|k⟩.
pub fn hadamard(space: QuditSpace) -> QuditGate {
    let d = space.d();
    let norm = 1.0 / (d as f64).sqrt();
    let m = CMatrix::from_fn(d, d, |k, j| space.omega_pow(j * k) * norm);
    QuditGate { matrix: m }
}

/// R_k(θ): phase e^{iθ} on level k only.
pub fn phase_gate(space: QuditSpace, k: usize, theta: f64) -> Result<QuditGate> {
    let d = space.d();
    if k >= d {
        return Err(Error::LevelOutOfRange { level: k, dim: d });
    }
    let mut phases = vec![C64::new(1.0, 0.0); d];
    phases[k] = cis(theta);
    Ok(QuditGate::from_diagonal(&phases))
}

/// Diagonal single-qudit gate with the given per-level phases.
pub fn diagonal_phases(phases: &[f64]) -> QuditGate {
    let p: Vec<C64> = phases.iter().map(|&t| cis(t)).collect();
    QuditGate::from_diagonal(&p)
}

/// Two-qudit controlled-Z, CZ|j,k⟩ = ω^{jk}|j,k⟩, index `j·d + k`.
pub fn cz(space: QuditSpace) -> QuditGate {
    let d = space.d();
    let phases: Vec<C64> =
        (0..d * d).map(|idx| space.omega_pow((idx / d) * (idx % d))).collect();
    QuditGate::from_diagonal(&phases)
}

/// Validates a conditional-phase target set: nonempty, within range and
/// never containing level 0.
pub fn validate_targets(space: QuditSpace, targets: &[usize]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidTargets("target set is empty".into()));
    }
    for &t in targets {
        if t == 0 {
            return Err(Error::InvalidTargets("level 0 is never Rydberg-coupled".into()));
        }
        if t >= space.d() {
            return Err(Error::LevelOutOfRange { level: t, dim: space.d() });
        }
    }
    Ok(())
}

/// CR_S(θ): phase e^{iθ} on |k₁,k₂⟩ iff both k₁ and k₂ lie in `targets`.
pub fn cr(space: QuditSpace, targets: &[usize], theta: f64) -> Result<QuditGate> {
    validate_targets(space, targets)?;
    let d = space.d();
    let phase = cis(theta);
    let one = C64::new(1.0, 0.0);
    let phases: Vec<C64> = (0..d * d)
        .map(|idx| {
            if targets.contains(&(idx / d)) && targets.contains(&(idx % d)) {
                phase
            } else {
                one
            }
        })
        .collect();
    Ok(QuditGate::from_diagonal(&phases))
}

/// Swap of two qudits on the `d²`-dimensional product space.
pub fn swap(space: QuditSpace) -> QuditGate {
    let d = space.d();
    let mut m = CMatrix::zeros(d * d, d * d);
    for j in 0..d {
        for k in 0..d {
            m[(k * d + j, j * d + k)] = C64::new(1.0, 0.0);
        }
    }
    QuditGate { matrix: m }
}

/// Trace overlap Tr(U_tar† U) between two square matrices.
pub fn trace_overlap(target: &CMatrix, achieved: &CMatrix) -> C64 {
    target.iter().zip(achieved.iter()).map(|(t, a)| t.conj() * a).sum()
}

/// Averaged gate fidelity |Tr(U_tar† U)|² / d^{2n}.
///
/// `achieved` is the projection of the true propagator onto the computational
/// subspace and may be sub-unitary, in which case the result is strictly below 1.
pub fn average_gate_fidelity(
    target: &QuditGate,
    achieved: &QuditGate,
    n_qudits: u32,
    space: QuditSpace,
) -> Result<f64> {
    let dim = space.d().pow(n_qudits);
    for g in [target, achieved] {
        if g.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: g.dim() });
        }
    }
    let t = trace_overlap(&target.matrix, &achieved.matrix);
    Ok(t.norm_sqr() / (dim * dim) as f64)
}
