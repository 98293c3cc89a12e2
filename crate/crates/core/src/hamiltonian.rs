//! Hamiltonian builders for single atoms and Rydberg-blockaded atom pairs.
//!
//! Single-atom level spaces are indexed with the `d` computational levels
//! first, followed by the Rydberg levels `r_1 … r_n`. Two-atom spaces use a
//! [`TwoAtomBasis`] whose leading `d²` states are the computational pairs in
//! row-major order, so projecting onto the computational subspace is a
//! leading-block extraction.

use std::collections::HashSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::algebra::{cis, CMatrix, C64};
use crate::dynamics::{ControlOperator, ControlSystem, Rotating};
use crate::error::{Error, Result};

/// Converts an ordinary frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_rad(mhz: f64) -> f64 {
    TAU * mhz * 1e6
}

pub fn rad_to_mhz(rad: f64) -> f64 {
    rad / (TAU * 1e6)
}

/// Qudit levels plus the Rydberg levels each of them is coupled to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelScheme {
    d: usize,
    /// `couplings[k]` is the qudit level coupled to Rydberg level `r_{k+1}`.
    couplings: Vec<usize>,
}

impl LevelScheme {
    pub fn new(d: usize, couplings: Vec<usize>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidConfig(format!("qudit dimension must be >= 2, got {d}")));
        }
        let mut seen = HashSet::new();
        for &c in &couplings {
            if c == 0 {
                return Err(Error::InvalidConfig("level 0 cannot be Rydberg-coupled".into()));
            }
            if c >= d {
                return Err(Error::LevelOutOfRange { level: c, dim: d });
            }
            if !seen.insert(c) {
                return Err(Error::InvalidConfig(format!("level {c} coupled to two Rydberg levels")));
            }
        }
        Ok(Self { d, couplings })
    }

    /// The standard scheme with `r_k ↔ |k⟩` for `k = 1..=n_ryd`.
    pub fn standard(d: usize, n_ryd: usize) -> Result<Self> {
        Self::new(d, (1..=n_ryd).collect())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_ryd(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &[usize] {
        &self.couplings
    }

    /// Single-atom dimension `d + n_ryd`.
    pub fn single_dim(&self) -> usize {
        self.d + self.couplings.len()
    }

    /// Flat index of Rydberg level `r_{k+1}`.
    pub fn rydberg_index(&self, k: usize) -> usize {
        self.d + k
    }

    pub fn is_rydberg(&self, level: usize) -> bool {
        level >= self.d
    }

    /// Rydberg slot coupled to a qudit level, if any.
    pub fn rydberg_for(&self, level: usize) -> Option<usize> {
        self.couplings.iter().position(|&c| c == level)
    }

    pub fn level_label(&self, level: usize) -> String {
        if level < self.d {
            level.to_string()
        } else {
            format!("r{}", level - self.d + 1)
        }
    }
}

/// Complex drive envelope Ω(t) in rad/s.
#[derive(Clone, Debug, PartialEq)]
pub enum Envelope {
    Constant(C64),
    /// Piecewise-constant samples over `[0, duration)`.
    Samples { duration: f64, values: Vec<C64> },
}

impl Envelope {
    pub fn at(&self, t: f64) -> C64 {
        match self {
            Envelope::Constant(z) => *z,
            Envelope::Samples { duration, values } => {
                if values.is_empty() {
                    return C64::new(0.0, 0.0);
                }
                let n = values.len();
                let idx = ((t / duration) * n as f64).floor();
                let idx = if idx < 0.0 { 0 } else { (idx as usize).min(n - 1) };
                values[idx]
            }
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        match self {
            Envelope::Constant(z) => z.norm(),
            Envelope::Samples { values, .. } => values.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }
}

/// A resonant drive between two levels with Rabi envelope Ω(t) and cap Ω̄.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveTone {
    pub lower: usize,
    pub upper: usize,
    pub envelope: Envelope,
    pub cap: f64,
}

impl DriveTone {
    pub fn new(lower: usize, upper: usize, envelope: Envelope, cap: f64) -> Result<Self> {
        if lower == upper {
            return Err(Error::InvalidTones(format!("tone couples level {lower} to itself")));
        }
        if envelope.max_amplitude() > cap * (1.0 + 1e-12) {
            return Err(Error::InvalidTones(format!(
                "envelope amplitude {:e} exceeds cap {:e}",
                envelope.max_amplitude(),
                cap
            )));
        }
        Ok(Self { lower, upper, envelope, cap })
    }
}

fn validate_pairs(dim: usize, pairs: &[(usize, usize)]) -> Result<()> {
    let mut seen = HashSet::new();
    for &(a, b) in pairs {
        if a == b {
            return Err(Error::InvalidTones(format!("tone couples level {a} to itself")));
        }
        for l in [a, b] {
            if l >= dim {
                return Err(Error::LevelOutOfRange { level: l, dim });
            }
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::InvalidTones(format!("transition {a}<->{b} driven twice")));
        }
    }
    Ok(())
}

/// Σ_tones (Ω(t)/2)|lower⟩⟨upper| + h.c. over a `dim`-level atom.
pub fn single_atom_hamiltonian(dim: usize, tones: &[DriveTone], t: f64) -> Result<CMatrix> {
    let pairs: Vec<_> = tones.iter().map(|tn| (tn.lower, tn.upper)).collect();
    validate_pairs(dim, &pairs)?;
    let mut h = CMatrix::zeros(dim, dim);
    for tone in tones {
        let half = tone.envelope.at(t) * 0.5;
        h[(tone.lower, tone.upper)] += half;
        h[(tone.upper, tone.lower)] += half.conj();
    }
    Ok(h)
}

/// Real control decomposition H = Σ_m u_m H_m with Ω_j = 2u_{2j} + 2i·u_{2j+1}
/// (0-based: tone `j` owns operators `2j` and `2j+1`).
#[derive(Clone, Debug)]
pub struct ControlBasis {
    dim: usize,
    tones: Vec<(usize, usize)>,
    operators: Vec<CMatrix>,
}

impl ControlBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn tones(&self) -> &[(usize, usize)] {
        &self.tones
    }

    pub fn n_controls(&self) -> usize {
        self.operators.len()
    }

    /// Σ_m u_m H_m.
    pub fn hamiltonian(&self, u: &[f64]) -> Result<CMatrix> {
        if u.len() != self.operators.len() {
            return Err(Error::DimensionMismatch { expected: self.operators.len(), got: u.len() });
        }
        let mut h = CMatrix::zeros(self.dim, self.dim);
        for (op, &c) in self.operators.iter().zip(u) {
            h += op * C64::new(c, 0.0);
        }
        Ok(h)
    }

    /// Splits complex envelopes into the real control amplitudes u_m.
    pub fn decompose(omegas: &[C64]) -> Vec<f64> {
        omegas.iter().flat_map(|w| [w.re / 2.0, w.im / 2.0]).collect()
    }

    /// Reassembles Ω_j = 2u_{2j} + 2i·u_{2j+1}.
    pub fn reassemble(u: &[f64]) -> Vec<C64> {
        u.chunks(2).map(|p| C64::new(2.0 * p[0], 2.0 * p[1])).collect()
    }

    pub fn system(&self) -> ControlSystem {
        ControlSystem::new(
            CMatrix::zeros(self.dim, self.dim),
            self.operators.iter().cloned().map(ControlOperator::fixed).collect(),
            self.dim,
        )
        .expect("operators share the basis dimension")
    }
}

/// `|g⟩⟨e| + h.c.` and `i|g⟩⟨e| + h.c.` for each tone.
pub fn control_basis(dim: usize, tones: &[(usize, usize)]) -> Result<ControlBasis> {
    validate_pairs(dim, tones)?;
    let mut operators = Vec::with_capacity(2 * tones.len());
    for &(g, e) in tones {
        let mut hx = CMatrix::zeros(dim, dim);
        hx[(g, e)] = C64::new(1.0, 0.0);
        hx[(e, g)] = C64::new(1.0, 0.0);
        let mut hy = CMatrix::zeros(dim, dim);
        hy[(g, e)] = C64::new(0.0, 1.0);
        hy[(e, g)] = C64::new(0.0, -1.0);
        operators.push(hx);
        operators.push(hy);
    }
    Ok(ControlBasis { dim, tones: tones.to_vec(), operators })
}

/// Interaction between doubly-excited Rydberg pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Blockade {
    /// Doubly-Rydberg states are removed from the evolution space.
    Perfect,
    /// Uniform shift V (rad/s) on every |r_k, r_l⟩.
    Finite(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoAtomConfig {
    pub scheme: LevelScheme,
    pub blockade: Blockade,
    /// Splitting δω_{1,2} (rad/s) between the two Rydberg transitions when
    /// the tones cross-drive each other.
    pub crosstalk_delta: Option<f64>,
}

impl TwoAtomConfig {
    pub fn new(scheme: LevelScheme, blockade: Blockade, crosstalk_delta: Option<f64>) -> Result<Self> {
        if let Blockade::Finite(v) = blockade {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("blockade strength must be positive, got {v}")));
            }
        }
        if crosstalk_delta.is_some() && scheme.n_ryd() < 2 {
            return Err(Error::InvalidConfig("crosstalk needs two Rydberg levels".into()));
        }
        Ok(Self { scheme, blockade, crosstalk_delta })
    }

    pub fn basis(&self) -> TwoAtomBasis {
        TwoAtomBasis::new(&self.scheme, self.blockade)
    }
}

/// Either a number (MHz) or the string "inf".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaybeInfinite {
    Value(f64),
    Tag(String),
}

impl MaybeInfinite {
    pub fn infinite() -> Self {
        MaybeInfinite::Tag("inf".into())
    }

    pub fn value(&self) -> Result<Option<f64>> {
        match self {
            MaybeInfinite::Value(v) => Ok(Some(*v)),
            MaybeInfinite::Tag(s) if s.eq_ignore_ascii_case("inf") => Ok(None),
            MaybeInfinite::Tag(s) => Err(Error::InvalidConfig(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

/// JSON block `{d, n_ryd, couplings, V_MHz | "inf", delta_MHz}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoAtomConfigJson {
    pub d: usize,
    pub n_ryd: usize,
    pub couplings: Vec<usize>,
    #[serde(rename = "V_MHz")]
    pub v_mhz: MaybeInfinite,
    #[serde(rename = "delta_MHz", default)]
    pub delta_mhz: Option<f64>,
}

impl TryFrom<TwoAtomConfigJson> for TwoAtomConfig {
    type Error = Error;

    fn try_from(raw: TwoAtomConfigJson) -> Result<Self> {
        if raw.couplings.len() != raw.n_ryd {
            return Err(Error::InvalidConfig(format!(
                "n_ryd = {} but {} couplings given",
                raw.n_ryd,
                raw.couplings.len()
            )));
        }
        let scheme = LevelScheme::new(raw.d, raw.couplings)?;
        let blockade = match raw.v_mhz.value()? {
            None => Blockade::Perfect,
            Some(v) => Blockade::Finite(mhz_to_rad(v)),
        };
        TwoAtomConfig::new(scheme, blockade, raw.delta_mhz.map(mhz_to_rad))
    }
}

impl From<&TwoAtomConfig> for TwoAtomConfigJson {
    fn from(c: &TwoAtomConfig) -> Self {
        TwoAtomConfigJson {
            d: c.scheme.d(),
            n_ryd: c.scheme.n_ryd(),
            couplings: c.scheme.couplings().to_vec(),
            v_mhz: match c.blockade {
                Blockade::Perfect => MaybeInfinite::infinite(),
                Blockade::Finite(v) => MaybeInfinite::Value(rad_to_mhz(v)),
            },
            delta_mhz: c.crosstalk_delta.map(rad_to_mhz),
        }
    }
}

/// Ordered two-atom basis: computational pairs (row-major), then pairs with a
/// single Rydberg excitation, then doubly-Rydberg pairs (finite blockade only).
#[derive(Clone, Debug)]
pub struct TwoAtomBasis {
    d: usize,
    single_dim: usize,
    states: Vec<(usize, usize)>,
    lookup: Vec<Option<usize>>,
}

impl TwoAtomBasis {
    pub fn new(scheme: &LevelScheme, blockade: Blockade) -> Self {
        let d = scheme.d();
        let n = scheme.single_dim();
        let mut states = Vec::with_capacity(n * n);
        for a in 0..d {
            for b in 0..d {
                states.push((a, b));
            }
        }
        for a in 0..n {
            for b in 0..n {
                if (a >= d) != (b >= d) {
                    states.push((a, b));
                }
            }
        }
        if matches!(blockade, Blockade::Finite(_)) {
            for a in d..n {
                for b in d..n {
                    states.push((a, b));
                }
            }
        }
        let mut lookup = vec![None; n * n];
        for (i, &(a, b)) in states.iter().enumerate() {
            lookup[a * n + b] = Some(i);
        }
        Self { d, single_dim: n, states, lookup }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn comp_dim(&self) -> usize {
        self.d * self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn single_dim(&self) -> usize {
        self.single_dim
    }

    pub fn states(&self) -> &[(usize, usize)] {
        &self.states
    }

    pub fn index(&self, a: usize, b: usize) -> Option<usize> {
        if a >= self.single_dim || b >= self.single_dim {
            return None;
        }
        self.lookup[a * self.single_dim + b]
    }

    /// Number of atoms in a Rydberg level for each basis state.
    pub fn rydberg_count(&self) -> Vec<usize> {
        self.states.iter().map(|&(a, b)| (a >= self.d) as usize + (b >= self.d) as usize).collect()
    }

    /// `A⊗I + I⊗A` restricted to the basis.
    pub fn lift_symmetric(&self, single: &CMatrix) -> CMatrix {
        let n = self.single_dim;
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (col, &(a, b)) in self.states.iter().enumerate() {
            for x in 0..n {
                let amp = single[(x, a)];
                if amp != C64::new(0.0, 0.0) {
                    if let Some(row) = self.index(x, b) {
                        out[(row, col)] += amp;
                    }
                }
                let amp = single[(x, b)];
                if amp != C64::new(0.0, 0.0) {
                    if let Some(row) = self.index(a, x) {
                        out[(row, col)] += amp;
                    }
                }
            }
        }
        out
    }

    /// `A⊗B` restricted to the basis.
    pub fn lift_product(&self, left: &CMatrix, right: &CMatrix) -> CMatrix {
        let n = self.single_dim;
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (col, &(a, b)) in self.states.iter().enumerate() {
            for x in 0..n {
                let la = left[(x, a)];
                if la == C64::new(0.0, 0.0) {
                    continue;
                }
                for y in 0..n {
                    let rb = right[(y, b)];
                    if rb == C64::new(0.0, 0.0) {
                        continue;
                    }
                    if let Some(row) = self.index(x, y) {
                        out[(row, col)] += la * rb;
                    }
                }
            }
        }
        out
    }

    /// Permutation exchanging the two atoms.
    pub fn swap(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (col, &(a, b)) in self.states.iter().enumerate() {
            let row = self.index(b, a).expect("basis is closed under exchange");
            out[(row, col)] = C64::new(1.0, 0.0);
        }
        out
    }

    /// Diagonal V on every doubly-Rydberg pair present in the basis.
    pub fn blockade_shift(&self, v: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (i, &(a, b)) in self.states.iter().enumerate() {
            if a >= self.d && b >= self.d {
                out[(i, i)] = C64::new(v, 0.0);
            }
        }
        out
    }

    pub fn label(&self, scheme: &LevelScheme, i: usize) -> String {
        let (a, b) = self.states[i];
        format!("{},{}", scheme.level_label(a), scheme.level_label(b))
    }
}

fn check_rydberg_tone(scheme: &LevelScheme, lower: usize, upper: usize) -> Result<usize> {
    let k = scheme
        .rydberg_for(lower)
        .ok_or_else(|| Error::InvalidTones(format!("level {lower} is not Rydberg-coupled")))?;
    if upper != scheme.rydberg_index(k) {
        return Err(Error::InvalidTones(format!(
            "tone {lower}<->{upper} does not match coupling {lower}<->{}",
            scheme.rydberg_index(k)
        )));
    }
    Ok(k)
}

/// Global symmetric Rydberg drive on both atoms plus the blockade shift.
pub fn two_atom_hamiltonian(config: &TwoAtomConfig, ryd_tones: &[DriveTone], t: f64) -> Result<CMatrix> {
    let scheme = &config.scheme;
    for tone in ryd_tones {
        check_rydberg_tone(scheme, tone.lower, tone.upper)?;
    }
    let single = single_atom_hamiltonian(scheme.single_dim(), ryd_tones, t)?;
    let basis = config.basis();
    let mut h = basis.lift_symmetric(&single);
    if let Blockade::Finite(v) = config.blockade {
        h += basis.blockade_shift(v);
    }
    Ok(h)
}

/// Single-atom operator |a⟩⟨b|.
fn ket_bra(dim: usize, a: usize, b: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(a, b)] = C64::new(1.0, 0.0);
    m
}

/// Drive on the first Rydberg transition together with its unwanted
/// cross-drive of the second, which rotates at δω:
///
/// ```text
/// (Ω₁/2)(|c₁⟩⟨r₁|⊗I + I⊗|c₁⟩⟨r₁|) + (Ω₁e^{iδω t}/2)(|c₂⟩⟨r₂|⊗I + I⊗|c₂⟩⟨r₂|) + h.c.
/// ```
///
/// plus the blockade shift. There is no |c₁⟩↔|r₂⟩ term.
pub fn crosstalk_hamiltonian(config: &TwoAtomConfig, omega1: &Envelope, t: f64) -> Result<CMatrix> {
    let delta = config
        .crosstalk_delta
        .ok_or_else(|| Error::InvalidConfig("crosstalk splitting not set".into()))?;
    let scheme = &config.scheme;
    if scheme.n_ryd() < 2 {
        return Err(Error::InvalidConfig("crosstalk needs two Rydberg levels".into()));
    }
    let n = scheme.single_dim();
    let (c1, c2) = (scheme.couplings()[0], scheme.couplings()[1]);
    let (r1, r2) = (scheme.rydberg_index(0), scheme.rydberg_index(1));
    let w = omega1.at(t) * 0.5;
    let mut single = ket_bra(n, c1, r1) * w + ket_bra(n, c2, r2) * (w * cis(delta * t));
    single += single.adjoint();
    let basis = config.basis();
    let mut h = basis.lift_symmetric(&single);
    if let Blockade::Finite(v) = config.blockade {
        h += basis.blockade_shift(v);
    }
    Ok(h)
}

/// Control system for global Rydberg tones on a two-atom pair.
///
/// `tones` lists the Rydberg slots driven (0-based `k` for `r_{k+1}`). Each tone
/// contributes the two real controls of [`ControlBasis`]. When the config has
/// a crosstalk splitting, tone on slot 0 also drives slot 1 rotating at `+δω`,
/// and tone on slot 1 drives slot 0 rotating at `−δω`.
pub fn two_atom_system(config: &TwoAtomConfig, tones: &[usize]) -> Result<ControlSystem> {
    let scheme = &config.scheme;
    let n = scheme.single_dim();
    let basis = config.basis();
    let mut seen = HashSet::new();
    let mut controls = Vec::with_capacity(2 * tones.len());
    for &k in tones {
        if k >= scheme.n_ryd() {
            return Err(Error::InvalidTones(format!("Rydberg slot {k} not in scheme")));
        }
        if !seen.insert(k) {
            return Err(Error::InvalidTones(format!("Rydberg slot {k} driven twice")));
        }
        let lower = scheme.couplings()[k];
        let upper = scheme.rydberg_index(k);
        let raise = ket_bra(n, lower, upper);
        let hx = basis.lift_symmetric(&(&raise + raise.adjoint()));
        let hy = basis.lift_symmetric(&(raise.map(|z| z * C64::i()) + raise.adjoint().map(|z| z * -C64::i())));
        match config.crosstalk_delta {
            Some(delta) if k < 2 => {
                let other = 1 - k;
                let lo = scheme.couplings()[other];
                let up = scheme.rydberg_index(other);
                let cross = basis.lift_symmetric(&ket_bra(n, lo, up));
                let freq = if k == 0 { delta } else { -delta };
                controls.push(ControlOperator {
                    fixed: hx,
                    rotating: Some(Rotating { raising: cross.clone(), frequency: freq }),
                });
                controls.push(ControlOperator {
                    fixed: hy,
                    rotating: Some(Rotating { raising: cross * C64::i(), frequency: freq }),
                });
            }
            _ => {
                controls.push(ControlOperator::fixed(hx));
                controls.push(ControlOperator::fixed(hy));
            }
        }
    }
    let drift = match config.blockade {
        Blockade::Finite(v) => basis.blockade_shift(v),
        Blockade::Perfect => CMatrix::zeros(basis.dim(), basis.dim()),
    };
    ControlSystem::new(drift, controls, basis.comp_dim())
}

/// Projectors onto computational, singly-Rydberg and doubly-Rydberg states.
#[derive(Clone, Debug)]
pub struct RydbergProjectors {
    pub comp: CMatrix,
    pub ryd: CMatrix,
    pub bloc: CMatrix,
}

impl RydbergProjectors {
    /// Weighted Rydberg-number operator Π_ryd + 2Π_bloc.
    pub fn rydberg_weight(&self) -> CMatrix {
        &self.ryd + &self.bloc * C64::new(2.0, 0.0)
    }
}

pub fn projectors(basis: &TwoAtomBasis) -> RydbergProjectors {
    let dim = basis.dim();
    let d = basis.d();
    let mut comp = CMatrix::zeros(dim, dim);
    let mut ryd = CMatrix::zeros(dim, dim);
    let mut bloc = CMatrix::zeros(dim, dim);
    let one = C64::new(1.0, 0.0);
    for (i, &(a, b)) in basis.states().iter().enumerate() {
        match ((a >= d) as u8) + ((b >= d) as u8) {
            0 => comp[(i, i)] = one,
            1 => ryd[(i, i)] = one,
            _ => bloc[(i, i)] = one,
        }
    }
    RydbergProjectors { comp, ryd, bloc }
}
