//! Piecewise-constant propagation of controlled Hamiltonians.
//!
//! Drives couple only a handful of levels, so a [`ControlSystem`] splits its
//! state space into the connected components of the combined sparsity of the
//! drift and every control operator. Each slice exponential is computed per
//! block through a Hermitian eigendecomposition, which is kept in the
//! [`PropagationRecord`] for exact gradient evaluation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::algebra::{cis, CMatrix, CVector, C64};
use crate::error::{Error, Result};

/// Largest allowed `‖H‖·dt` for one slice, in radians.
pub const MAX_PHASE_STEP: f64 = 0.5;

/// Uniform time grid of `n` slices over `[0, duration]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    duration: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(duration: f64, n: usize) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidConfig(format!("duration must be positive, got {duration}")));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("time grid needs at least one slice".into()));
        }
        Ok(Self { duration, n })
    }

    /// Smallest grid whose step does not exceed `max_step`.
    pub fn with_max_step(duration: f64, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0) {
            return Err(Error::InvalidConfig(format!("max step must be positive, got {max_step}")));
        }
        let n = (duration / max_step).ceil().max(1.0) as usize;
        Self::new(duration, n)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_slices(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.n as f64
    }

    pub fn start(&self, r: usize) -> f64 {
        r as f64 * self.dt()
    }

    pub fn midpoint(&self, r: usize) -> f64 {
        (r as f64 + 0.5) * self.dt()
    }
}

/// Term `e^{iωt}R + e^{−iωt}R†` riding on a control operator.
#[derive(Clone, Debug)]
pub struct Rotating {
    pub raising: CMatrix,
    pub frequency: f64,
}

/// Control operator `H_m(t) = H_fixed + rotating(t)` multiplying a real amplitude.
#[derive(Clone, Debug)]
pub struct ControlOperator {
    pub fixed: CMatrix,
    pub rotating: Option<Rotating>,
}

impl ControlOperator {
    pub fn fixed(m: CMatrix) -> Self {
        Self { fixed: m, rotating: None }
    }

    pub fn at(&self, t: f64) -> CMatrix {
        match &self.rotating {
            None => self.fixed.clone(),
            Some(rot) => {
                let w = cis(rot.frequency * t);
                let r = &rot.raising * w;
                &self.fixed + &r + r.adjoint()
            }
        }
    }

    fn sparsity(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let rot = self.rotating.iter().flat_map(|r| nonzeros(&r.raising));
        nonzeros(&self.fixed).chain(rot)
    }

    fn restrict(&self, idx: &[usize]) -> ControlOperator {
        ControlOperator {
            fixed: restrict(&self.fixed, idx),
            rotating: self
                .rotating
                .as_ref()
                .map(|r| Rotating { raising: restrict(&r.raising, idx), frequency: r.frequency }),
        }
    }
}

fn nonzeros(m: &CMatrix) -> impl Iterator<Item = (usize, usize)> + '_ {
    let rows = m.nrows();
    m.iter()
        .enumerate()
        .filter(|(_, z)| z.norm_sqr() > 0.0)
        .map(move |(k, _)| (k % rows, k / rows))
}

fn same_matrices(a: &Block, b: &Block) -> bool {
    a.dim() == b.dim()
        && a.drift == b.drift
        && a.controls.iter().zip(&b.controls).all(|(x, y)| {
            x.fixed == y.fixed
                && match (&x.rotating, &y.rotating) {
                    (None, None) => true,
                    (Some(p), Some(q)) => p.frequency == q.frequency && p.raising == q.raising,
                    _ => false,
                }
        })
}

fn restrict(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Nonzero entries `(row, col, value)` of a matrix.
pub type SparseEntries = Vec<(usize, usize, C64)>;

fn sparse(m: &CMatrix) -> SparseEntries {
    nonzeros(m).map(|(i, j)| (i, j, m[(i, j)])).collect()
}

/// Sparse form of a [`ControlOperator`] restricted to one block.
#[derive(Clone, Debug)]
pub struct SparseControl {
    pub fixed: SparseEntries,
    /// Entries of the raising part and its frequency.
    pub rotating: Option<(SparseEntries, f64)>,
}

impl SparseControl {
    fn from_operator(op: &ControlOperator) -> Self {
        Self {
            fixed: sparse(&op.fixed),
            rotating: op.rotating.as_ref().map(|r| (sparse(&r.raising), r.frequency)),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.fixed.is_empty() && self.rotating.as_ref().is_none_or(|(e, _)| e.is_empty())
    }

    /// Adds `c·H_m(t)` to `h`.
    pub fn add_to(&self, h: &mut CMatrix, c: f64, t: f64) {
        for &(i, j, v) in &self.fixed {
            h[(i, j)] += v * c;
        }
        if let Some((entries, freq)) = &self.rotating {
            let w = cis(freq * t) * c;
            for &(i, j, v) in entries {
                h[(i, j)] += v * w;
                h[(j, i)] += (v * w).conj();
            }
        }
    }

    /// `Σ_ij H_m(t)_ij · z_ij`.
    pub fn contract(&self, z: &CMatrix, t: f64) -> C64 {
        let mut acc: C64 = self.fixed.iter().map(|&(i, j, v)| v * z[(i, j)]).sum();
        if let Some((entries, freq)) = &self.rotating {
            let w = cis(freq * t);
            for &(i, j, v) in entries {
                let vw = v * w;
                acc += vw * z[(i, j)] + vw.conj() * z[(j, i)];
            }
        }
        acc
    }
}

/// One invariant subspace of a [`ControlSystem`].
#[derive(Clone, Debug)]
pub struct Block {
    /// Global basis indices, ascending.
    pub indices: Vec<usize>,
    pub drift: CMatrix,
    pub controls: Vec<ControlOperator>,
    pub sparse: Vec<SparseControl>,
}

impl Block {
    fn new(indices: Vec<usize>, drift: &CMatrix, controls: &[ControlOperator]) -> Self {
        let controls: Vec<ControlOperator> = controls.iter().map(|c| c.restrict(&indices)).collect();
        let sparse = controls.iter().map(SparseControl::from_operator).collect();
        Self { drift: restrict(drift, &indices), controls, sparse, indices }
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    /// Block Hamiltonian at time `t` for amplitudes `u`.
    pub fn hamiltonian(&self, u: &[f64], t: f64) -> CMatrix {
        let mut h = self.drift.clone();
        for (op, &c) in self.sparse.iter().zip(u) {
            if c != 0.0 {
                op.add_to(&mut h, c, t);
            }
        }
        h
    }
}

/// Drift plus real-amplitude controls, `H(t) = H_0 + Σ_m u_m(t) H_m(t)`.
///
/// The leading `comp_dim` basis states form the computational subspace that
/// fidelities are evaluated on.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    dim: usize,
    comp_dim: usize,
    drift: CMatrix,
    controls: Vec<ControlOperator>,
    blocks: Vec<Block>,
    /// Class of each block; blocks with identical matrices share a class.
    class_of: Vec<usize>,
    /// Representative block of each class.
    classes: Vec<usize>,
    /// `(block, position within block)` for each global index.
    locate: Vec<(usize, usize)>,
}

fn hermitian_defect(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

impl ControlSystem {
    pub fn new(drift: CMatrix, controls: Vec<ControlOperator>, comp_dim: usize) -> Result<Self> {
        let dim = drift.nrows();
        if drift.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: drift.ncols() });
        }
        if comp_dim == 0 || comp_dim > dim {
            return Err(Error::InvalidConfig(format!("computational dimension {comp_dim} outside 1..={dim}")));
        }
        if hermitian_defect(&drift) > 1e-12 {
            return Err(Error::InvalidConfig("drift is not Hermitian".into()));
        }
        for op in &controls {
            for m in std::iter::once(&op.fixed).chain(op.rotating.iter().map(|r| &r.raising)) {
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: m.nrows() });
                }
            }
            if hermitian_defect(&op.fixed) > 1e-12 {
                return Err(Error::InvalidConfig("control operator is not Hermitian".into()));
            }
        }

        // union-find over the combined sparsity pattern
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let edges = nonzeros(&drift).chain(controls.iter().flat_map(|c| c.sparsity())).collect::<Vec<_>>();
        for (i, j) in edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; dim];
        for i in 0..dim {
            let r = find(&mut parent, i);
            if root_slot[r] == usize::MAX {
                root_slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_slot[r]].push(i);
        }
        let mut locate = vec![(0, 0); dim];
        let blocks = groups
            .into_iter()
            .enumerate()
            .map(|(b, idx)| {
                for (p, &i) in idx.iter().enumerate() {
                    locate[i] = (b, p);
                }
                Block::new(idx, &drift, &controls)
            })
            .collect::<Vec<Block>>();
        let mut classes: Vec<usize> = Vec::new();
        let mut class_of = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            let found = classes.iter().position(|&rep| same_matrices(&blocks[rep], block));
            match found {
                Some(c) => class_of.push(c),
                None => {
                    class_of.push(classes.len());
                    classes.push(b);
                }
            }
        }
        Ok(Self { dim, comp_dim, drift, controls, blocks, class_of, classes, locate })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn comp_dim(&self) -> usize {
        self.comp_dim
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn drift(&self) -> &CMatrix {
        &self.drift
    }

    pub fn controls(&self) -> &[ControlOperator] {
        &self.controls
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of distinct block classes.
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, b: usize) -> usize {
        self.class_of[b]
    }

    /// Representative block of class `c`.
    pub fn class_block(&self, c: usize) -> &Block {
        &self.blocks[self.classes[c]]
    }

    pub fn locate(&self, i: usize) -> (usize, usize) {
        self.locate[i]
    }

    /// Full Hamiltonian at time `t`.
    pub fn hamiltonian(&self, u: &[f64], t: f64) -> CMatrix {
        let mut h = self.drift.clone();
        for (op, &c) in self.controls.iter().zip(u) {
            h += op.at(t) * C64::new(c, 0.0);
        }
        h
    }

    /// Scatters per-class matrices into a full matrix.
    pub fn assemble(&self, parts: &[CMatrix]) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for (b, block) in self.blocks.iter().enumerate() {
            let m = &parts[self.class_of[b]];
            for (a, &i) in block.indices.iter().enumerate() {
                for (b, &j) in block.indices.iter().enumerate() {
                    out[(i, j)] = m[(a, b)];
                }
            }
        }
        out
    }
}

/// Eigendecomposition `H = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(h: &CMatrix) -> Self {
        let n = h.nrows();
        if n == 1 {
            return Self { values: vec![h[(0, 0)].re], vectors: CMatrix::identity(1, 1) };
        }
        if h.iter().enumerate().all(|(k, z)| k % (n + 1) == 0 || z.norm_sqr() == 0.0) {
            return Self { values: (0..n).map(|i| h[(i, i)].re).collect(), vectors: CMatrix::identity(n, n) };
        }
        let eig = SymmetricEigen::new(h.clone());
        Self { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `e^{−iH dt}`.
    pub fn exp(&self, dt: f64) -> CMatrix {
        let phases: Vec<C64> = self.values.iter().map(|&l| cis(-l * dt)).collect();
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }

    /// Divided-difference kernel of `e^{−iH dt}` in the eigenbasis: the Fréchet
    /// derivative along `C` is `V (G ∘ V†CV) V†`.
    pub fn frechet_kernel(&self, dt: f64) -> CMatrix {
        let n = self.values.len();
        CMatrix::from_fn(n, n, |a, b| {
            let (la, lb) = (self.values[a], self.values[b]);
            let half = 0.5 * (lb - la) * dt;
            let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
            cis(-0.5 * (la + lb) * dt) * C64::new(0.0, -dt * sinc)
        })
    }
}

/// `e^{−iH dt}` for Hermitian `H`.
pub fn expm_hermitian(h: &CMatrix, dt: f64) -> CMatrix {
    HermitianEigen::new(h).exp(dt)
}

/// Per-block data of one time slice.
#[derive(Clone, Debug)]
pub struct SliceBlock {
    pub eigen: HermitianEigen,
    pub unitary: CMatrix,
}

/// Slice propagators and running products from a single forward pass.
#[derive(Clone, Debug)]
pub struct PropagationRecord {
    grid: TimeGrid,
    /// `slices[r][c]` for block class `c`.
    slices: Vec<Vec<SliceBlock>>,
    /// `forward[r][c] = U_r ⋯ U_1` restricted to class `c`, with `forward[0] = I`.
    forward: Vec<Vec<CMatrix>>,
}

impl PropagationRecord {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Slice `r` (0-based) of block class `c`.
    pub fn slice(&self, r: usize, c: usize) -> &SliceBlock {
        &self.slices[r][c]
    }

    /// Product of the first `r` slices of block class `c`.
    pub fn forward(&self, r: usize, c: usize) -> &CMatrix {
        &self.forward[r][c]
    }

    pub fn final_blocks(&self) -> &[CMatrix] {
        &self.forward[self.slices.len()]
    }

    pub fn final_unitary(&self, system: &ControlSystem) -> CMatrix {
        system.assemble(self.final_blocks())
    }

    /// Running product after `r` slices as a full matrix.
    pub fn cumulative(&self, system: &ControlSystem, r: usize) -> CMatrix {
        system.assemble(&self.forward[r])
    }
}

/// Controls are stored one column per slice: `controls[(m, r)] = u_m(t_r)`.
pub type ControlMatrix = DMatrix<f64>;

/// Forward propagation, keeping every slice decomposition.
pub fn propagate(system: &ControlSystem, controls: &ControlMatrix, grid: TimeGrid) -> Result<PropagationRecord> {
    let n = grid.n_slices();
    if controls.nrows() != system.n_controls() {
        return Err(Error::DimensionMismatch { expected: system.n_controls(), got: controls.nrows() });
    }
    if controls.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: controls.ncols() });
    }
    if controls.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control amplitudes"));
    }
    let dt = grid.dt();
    let mut slices = Vec::with_capacity(n);
    let mut forward = Vec::with_capacity(n + 1);
    let n_classes = system.n_classes();
    forward.push((0..n_classes).map(|c| CMatrix::identity(system.class_block(c).dim(), system.class_block(c).dim())).collect::<Vec<_>>());
    for r in 0..n {
        let u = controls.column(r);
        let u = u.as_slice();
        let t = grid.midpoint(r);
        let mut row = Vec::with_capacity(n_classes);
        let mut next = Vec::with_capacity(n_classes);
        for (b, prev) in forward[r].iter().enumerate() {
            let block = system.class_block(b);
            let eigen = HermitianEigen::new(&block.hamiltonian(u, t));
            let step = eigen.spectral_radius() * dt;
            if step >= MAX_PHASE_STEP {
                return Err(Error::InvalidConfig(format!(
                    "time step too coarse: |H|dt = {step:.3} rad in slice {r}, limit {MAX_PHASE_STEP}"
                )));
            }
            let unitary = eigen.exp(dt);
            next.push(&unitary * prev);
            row.push(SliceBlock { eigen, unitary });
        }
        slices.push(row);
        forward.push(next);
    }
    Ok(PropagationRecord { grid, slices, forward })
}

/// Final propagator only, without retaining slice data.
pub fn final_unitary(system: &ControlSystem, controls: &ControlMatrix, grid: TimeGrid) -> Result<CMatrix> {
    Ok(propagate(system, controls, grid)?.final_unitary(system))
}

/// Evolves a state under an arbitrary time-dependent Hamiltonian sampled at
/// slice midpoints. Returns the states at all `N + 1` slice boundaries.
pub fn evolve_state<F>(hamiltonian: F, psi0: &CVector, grid: TimeGrid) -> Result<Vec<CVector>>
where
    F: Fn(f64) -> CMatrix,
{
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.n_slices() + 1);
    out.push(psi0.clone());
    for r in 0..grid.n_slices() {
        let h = hamiltonian(grid.midpoint(r));
        if h.nrows() != psi0.len() {
            return Err(Error::DimensionMismatch { expected: psi0.len(), got: h.nrows() });
        }
        let next = expm_hermitian(&h, dt) * &out[r];
        out.push(next);
    }
    Ok(out)
}

/// Populations of every basis state along a controlled evolution from `psi0`,
/// one row per slice boundary.
pub fn population_trajectory(
    system: &ControlSystem,
    record: &PropagationRecord,
    psi0: &CVector,
) -> Result<Vec<Vec<f64>>> {
    if psi0.len() != system.dim() {
        return Err(Error::DimensionMismatch { expected: system.dim(), got: psi0.len() });
    }
    let n = record.grid().n_slices();
    let mut rows = Vec::with_capacity(n + 1);
    for r in 0..=n {
        let mut pops = vec![0.0; system.dim()];
        for (b, block) in system.blocks().iter().enumerate() {
            let f = record.forward(r, system.class_of(b));
            for (a, &i) in block.indices.iter().enumerate() {
                let amp: C64 = block.indices.iter().enumerate().map(|(c, &j)| f[(a, c)] * psi0[j]).sum();
                pops[i] = amp.norm_sqr();
            }
        }
        rows.push(pops);
    }
    Ok(rows)
}

/// Time-averaged weighted population, averaged over computational inputs:
///
/// ```text
/// (1/T) ∫ Tr(U(t)† W U(t) Π_comp) / Tr(Π_comp) dt
/// ```
///
/// with `W = diag(weights)`, evaluated with the midpoint rule. Passing the
/// singly-Rydberg indicator gives the mean Rydberg population of a gate.
pub fn average_population(system: &ControlSystem, record: &PropagationRecord, weights: &[f64]) -> Result<f64> {
    if weights.len() != system.dim() {
        return Err(Error::DimensionMismatch { expected: system.dim(), got: weights.len() });
    }
    let grid = record.grid();
    let half = 0.5 * grid.dt();
    let comp = system.comp_dim();
    let mut total = 0.0;
    for r in 0..grid.n_slices() {
        for (b, block) in system.blocks().iter().enumerate() {
            let cols: Vec<usize> =
                block.indices.iter().enumerate().filter(|(_, &i)| i < comp).map(|(a, _)| a).collect();
            if cols.is_empty() {
                continue;
            }
            let c = system.class_of(b);
            let mid = record.slice(r, c).eigen.exp(half) * record.forward(r, c);
            for &c in &cols {
                for (a, &i) in block.indices.iter().enumerate() {
                    total += weights[i] * mid[(a, c)].norm_sqr();
                }
            }
        }
    }
    Ok(total / (grid.n_slices() as f64 * comp as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::control_basis;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(scale / 2.0, 0.0)
    }

    /// Taylor series of e^{−iH dt}, independent of the eigen path.
    fn expm_taylor(h: &CMatrix, dt: f64) -> CMatrix {
        let n = h.nrows();
        let a = h * C64::new(0.0, -dt);
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &a / C64::new(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let h = random_hermitian(&mut rng, n, 2.0);
            let dt = 0.3;
            assert!((expm_hermitian(&h, dt) - expm_taylor(&h, dt)).norm() < 1e-12);
        }
    }

    #[test]
    fn resonant_pi_pulse_transfers_population() {
        let omega = 2.0 * PI * 1e6;
        let basis = control_basis(2, &[(0, 1)]).unwrap();
        let system = basis.system();
        let t = PI / omega;
        let grid = TimeGrid::new(t, 50).unwrap();
        let controls = ControlMatrix::from_fn(2, 50, |m, _| if m == 0 { omega / 2.0 } else { 0.0 });
        let u = final_unitary(&system, &controls, grid).unwrap();
        assert_abs_diff_eq!(u[(1, 0)].norm_sqr(), 1.0, epsilon = 1e-12);
        // e^{−iπσ_x/2} = −iσ_x
        assert_abs_diff_eq!(u[(1, 0)].im, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn blocks_follow_sparsity() {
        // qutrit with tones 0↔1 only: {0,1} and {2}
        let basis = control_basis(3, &[(0, 1)]).unwrap();
        let system = basis.system();
        let sizes: Vec<usize> = system.blocks().iter().map(|b| b.dim()).collect();
        assert_eq!(sizes, vec![2, 1]);
        assert_eq!(system.locate(2), (1, 0));
        assert_eq!(system.n_classes(), 2);
    }

    #[test]
    fn blocked_propagation_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = control_basis(5, &[(0, 3), (1, 4)]).unwrap();
        let system = basis.system();
        assert_eq!(system.blocks().len(), 3);
        // {0,3} and {1,4} carry different operators, so no sharing
        assert_eq!(system.n_classes(), 3);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let controls = ControlMatrix::from_fn(4, 20, |_, _| rng.random_range(-0.3..0.3));
        let u = final_unitary(&system, &controls, grid).unwrap();
        let mut dense = CMatrix::identity(5, 5);
        for r in 0..20 {
            let h = basis.hamiltonian(controls.column(r).as_slice()).unwrap();
            dense = expm_taylor(&h, grid.dt()) * dense;
        }
        assert!((u - dense).norm() < 1e-12);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let basis = control_basis(2, &[(0, 1)]).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let controls = ControlMatrix::from_element(2, 2, 1.0);
        assert!(matches!(propagate(&basis.system(), &controls, grid), Err(Error::InvalidConfig(_))));
        let bad = ControlMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(propagate(&basis.system(), &bad, grid), Err(Error::NonFinite(_))));
    }

    #[test]
    fn frechet_kernel_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(&mut rng, 4, 1.0);
        let c = random_hermitian(&mut rng, 4, 1.0);
        let dt = 0.4;
        let eig = HermitianEigen::new(&h);
        let g = eig.frechet_kernel(dt);
        let v = &eig.vectors;
        let inner = (v.adjoint() * &c * v).component_mul(&g);
        let exact = v * inner * v.adjoint();
        let eps = 1e-6;
        let fd = (expm_hermitian(&(&h + &c * C64::new(eps, 0.0)), dt)
            - expm_hermitian(&(&h - &c * C64::new(eps, 0.0)), dt))
            / C64::new(2.0 * eps, 0.0);
        assert!((exact - fd).norm() < 1e-8);
    }

    #[test]
    fn frechet_kernel_degenerate_limit() {
        let h = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]));
        let g = HermitianEigen::new(&h).frechet_kernel(0.2);
        let expected = C64::new(0.0, -0.2) * cis(-0.2);
        assert!((g[(0, 1)] - expected).norm() < 1e-15);
    }

    #[test]
    fn rotating_term_enters_blocks() {
        let n = 3;
        let mut raising = CMatrix::zeros(n, n);
        raising[(1, 2)] = C64::new(1.0, 0.0);
        let mut fixed = CMatrix::zeros(n, n);
        fixed[(0, 1)] = C64::new(1.0, 0.0);
        fixed[(1, 0)] = C64::new(1.0, 0.0);
        let op = ControlOperator { fixed, rotating: Some(Rotating { raising, frequency: 2.0 }) };
        let system = ControlSystem::new(CMatrix::zeros(n, n), vec![op.clone()], 1).unwrap();
        assert_eq!(system.blocks().len(), 1);
        let h = op.at(0.25);
        assert!((h[(1, 2)] - cis(0.5)).norm() < 1e-15);
        assert!((h[(2, 1)] - cis(-0.5)).norm() < 1e-15);
    }

    #[test]
    fn evolve_state_matches_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = control_basis(3, &[(0, 1), (1, 2)]).unwrap();
        let system = basis.system();
        let grid = TimeGrid::new(2.0, 30).unwrap();
        let controls = ControlMatrix::from_fn(4, 30, |_, _| rng.random_range(-0.5..0.5));
        let record = propagate(&system, &controls, grid).unwrap();
        let psi0 = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let states = evolve_state(
            |t| {
                let r = ((t / grid.dt()).floor() as usize).min(29);
                basis.hamiltonian(controls.column(r).as_slice()).unwrap()
            },
            &psi0,
            grid,
        )
        .unwrap();
        let pops = population_trajectory(&system, &record, &psi0).unwrap();
        for r in [0, 10, 30] {
            for i in 0..3 {
                assert_abs_diff_eq!(pops[r][i], states[r][i].norm_sqr(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn average_population_of_rabi_flop() {
        // resonant 2π pulse on 0↔1 with computational subspace {0}: ⟨P₁⟩ = 1/2
        let omega = 1.0;
        let basis = control_basis(2, &[(0, 1)]).unwrap();
        let system = ControlSystem::new(
            CMatrix::zeros(2, 2),
            basis.operators().iter().cloned().map(ControlOperator::fixed).collect(),
            1,
        )
        .unwrap();
        let grid = TimeGrid::new(2.0 * PI / omega, 400).unwrap();
        let controls = ControlMatrix::from_fn(2, 400, |m, _| if m == 0 { omega / 2.0 } else { 0.0 });
        let record = propagate(&system, &controls, grid).unwrap();
        let avg = average_population(&system, &record, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(avg, 0.5, epsilon = 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn propagation_is_unitary(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = control_basis(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
            let system = basis.system();
            let grid = TimeGrid::new(1.0, n).unwrap();
            let controls = ControlMatrix::from_fn(6, n, |_, _| rng.random_range(-0.1..0.1));
            let u = final_unitary(&system, &controls, grid).unwrap();
            let err = (u.adjoint() * &u - CMatrix::identity(4, 4)).norm();
            prop_assert!(err < 1e-10 * 4.0);
        }

        #[test]
        fn reversed_conjugate_controls_invert(seed in any::<u64>()) {
            // U[Ω(T−t)*]... for real-symmetric generators: U(−u reversed) = U(u)†
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = control_basis(3, &[(0, 1), (1, 2)]).unwrap();
            let system = basis.system();
            let grid = TimeGrid::new(1.0, 12).unwrap();
            let controls = ControlMatrix::from_fn(4, 12, |_, _| rng.random_range(-0.3..0.3));
            let reversed = ControlMatrix::from_fn(4, 12, |m, r| -controls[(m, 11 - r)]);
            let u = final_unitary(&system, &controls, grid).unwrap();
            let v = final_unitary(&system, &reversed, grid).unwrap();
            prop_assert!((v * u - CMatrix::identity(3, 3)).norm() < 1e-12);
        }
    }
}
