//! Maps from optimization parameters to per-slice control amplitudes.
//!
//! Tone `j` owns controls `2j` and `2j+1`, with `Ω_j = 2u_{2j} + 2i·u_{2j+1}`.
//! Each parametrization provides the forward map and its vector-Jacobian
//! product so slice gradients can be pulled back to parameter gradients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlMatrix, TimeGrid};
use crate::error::{Error, Result};

/// Raised-cosine amplitude envelope with rise and fall of length `ramp`,
/// sampled at slice midpoints. `ramp = 0` gives a flat mask.
pub fn raised_cosine_mask(grid: TimeGrid, ramp: f64) -> Vec<f64> {
    let t_total = grid.duration();
    (0..grid.n_slices())
        .map(|r| {
            if ramp <= 0.0 {
                return 1.0;
            }
            let t = grid.midpoint(r);
            let edge = t.min(t_total - t);
            if edge >= ramp {
                1.0
            } else {
                0.5 * (1.0 - (PI * edge / ramp).cos())
            }
        })
        .collect()
}

/// Piecewise-linear interpolation of `knots` uniform draws over `n` samples.
fn smooth_random<R: Rng>(rng: &mut R, n: usize, knots: usize, lo: f64, hi: f64) -> Vec<f64> {
    let k = knots.max(2);
    let values: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
    (0..n)
        .map(|r| {
            let x = if n == 1 { 0.0 } else { r as f64 / (n - 1) as f64 * (k - 1) as f64 };
            let i = (x.floor() as usize).min(k - 2);
            let f = x - i as f64;
            values[i] * (1.0 - f) + values[i + 1] * f
        })
        .collect()
}

const INIT_KNOTS: usize = 8;

/// Unconstrained per-slice amplitudes; the cap is enforced by radial
/// projection of each `(u_{2j}, u_{2j+1})` pair onto `|Ω_j| ≤ Ω̄_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerSlice {
    pub caps: Vec<f64>,
    pub n: usize,
}

/// Amplitude pinned to `Ω̄_j·mask(t)`, only the phases are free.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOnly {
    pub caps: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Truncated Fourier series per control, in units of `Ω̄_j/2`.
///
/// With `saturate`, each tone's raw envelope is passed through
/// `Ω ↦ Ω̄·tanh(|Ω|/Ω̄)·Ω/|Ω|`, which keeps `|Ω| < Ω̄` for any coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Fourier {
    pub caps: Vec<f64>,
    pub omega0: f64,
    pub k: usize,
    pub saturate: bool,
    pub mask: Vec<f64>,
    /// `basis[q][r]`: 1, cos(kω₀t_r) for k = 1..h, then sin(kω₀t_r) for k = 1..h.
    basis: Vec<Vec<f64>>,
}

/// Fourier coefficients `a[m][0..=h]`, `b[m][0..h]` (b index `i` is harmonic `i+1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierParams {
    pub omega0: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Fourier {
    pub fn new(caps: Vec<f64>, omega0: f64, k: usize, grid: TimeGrid, saturate: bool, mask: Option<Vec<f64>>) -> Result<Self> {
        if k % 2 != 1 {
            return Err(Error::InvalidConfig(format!("Fourier term count must be odd, got {k}")));
        }
        if !(omega0 > 0.0) {
            return Err(Error::InvalidConfig(format!("fundamental frequency must be positive, got {omega0}")));
        }
        let h = (k - 1) / 2;
        // the grid must resolve the fastest harmonic by a factor of 10
        let nyquist_like = 2.0 * PI / grid.dt();
        if h as f64 * omega0 * 10.0 > nyquist_like {
            return Err(Error::InvalidConfig(format!(
                "grid too coarse for cutoff {:.3e} rad/s (need dt <= {:.3e} s)",
                h as f64 * omega0,
                2.0 * PI / (10.0 * h as f64 * omega0)
            )));
        }
        let n = grid.n_slices();
        let mask = mask.unwrap_or_else(|| vec![1.0; n]);
        if mask.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
        }
        let times: Vec<f64> = (0..n).map(|r| grid.midpoint(r)).collect();
        let mut basis = vec![vec![1.0; n]];
        for q in 1..=h {
            basis.push(times.iter().map(|t| (q as f64 * omega0 * t).cos()).collect());
        }
        for q in 1..=h {
            basis.push(times.iter().map(|t| (q as f64 * omega0 * t).sin()).collect());
        }
        Ok(Self { caps, omega0, k, saturate, mask, basis })
    }

    pub fn harmonics(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn to_params(&self, p: &[f64]) -> FourierParams {
        let h = self.harmonics();
        let n_controls = 2 * self.caps.len();
        let a = (0..n_controls).map(|m| p[m * self.k..m * self.k + h + 1].to_vec()).collect();
        let b = (0..n_controls).map(|m| p[m * self.k + h + 1..(m + 1) * self.k].to_vec()).collect();
        FourierParams { omega0: self.omega0, k: self.k, a, b }
    }

    pub fn from_params(&self, params: &FourierParams) -> Result<Vec<f64>> {
        let h = self.harmonics();
        let n_controls = 2 * self.caps.len();
        if params.k != self.k || params.a.len() != n_controls || params.b.len() != n_controls {
            return Err(Error::InvalidConfig("Fourier parameter shape does not match".into()));
        }
        let mut p = Vec::with_capacity(n_controls * self.k);
        for m in 0..n_controls {
            if params.a[m].len() != h + 1 || params.b[m].len() != h {
                return Err(Error::InvalidConfig("Fourier coefficient count does not match K".into()));
            }
            p.extend_from_slice(&params.a[m]);
            p.extend_from_slice(&params.b[m]);
        }
        Ok(p)
    }

    /// Least-squares coefficients whose (saturated, masked) controls
    /// approximate `controls`. Amplitudes within 3% of the cap are clipped
    /// before inverting the saturation; slices where the mask is below 0.2
    /// are left out of the fit.
    pub fn fit(&self, controls: &ControlMatrix) -> Result<Vec<f64>> {
        let n = self.mask.len();
        let m = self.caps.len();
        if controls.nrows() != 2 * m || controls.ncols() != n {
            return Err(Error::DimensionMismatch { expected: 2 * m * n, got: controls.len() });
        }
        let rows: Vec<usize> = (0..n).filter(|&r| self.mask[r] >= 0.2).collect();
        let design = DMatrix::from_fn(rows.len(), self.k, |i, q| self.basis[q][rows[i]]);
        let svd = design.svd(true, true);
        let mut p = vec![0.0; 2 * m * self.k];
        for j in 0..m {
            let c = self.caps[j] / 2.0;
            let mut tx = DVector::zeros(rows.len());
            let mut ty = DVector::zeros(rows.len());
            for (i, &r) in rows.iter().enumerate() {
                let (x, y) = (controls[(2 * j, r)] / self.mask[r], controls[(2 * j + 1, r)] / self.mask[r]);
                let rho = x.hypot(y);
                let scale = if !self.saturate || rho == 0.0 {
                    1.0
                } else {
                    c * (rho / c).min(0.97).atanh() / rho
                };
                tx[i] = x * scale / c;
                ty[i] = y * scale / c;
            }
            for (row, target) in [(2 * j, tx), (2 * j + 1, ty)] {
                let sol = svd.solve(&target, 1e-10).map_err(|e| Error::InvalidConfig(e.into()))?;
                p[row * self.k..(row + 1) * self.k].copy_from_slice(sol.as_slice());
            }
        }
        Ok(p)
    }

    fn raw(&self, p: &[f64]) -> ControlMatrix {
        let n = self.mask.len();
        let n_controls = 2 * self.caps.len();
        let mut u = ControlMatrix::zeros(n_controls, n);
        for m in 0..n_controls {
            let scale = self.caps[m / 2] / 2.0;
            let coeffs = &p[m * self.k..(m + 1) * self.k];
            for (q, row) in self.basis.iter().enumerate() {
                let c = coeffs[q] * scale;
                if c == 0.0 {
                    continue;
                }
                for r in 0..n {
                    u[(m, r)] += c * row[r];
                }
            }
        }
        u
    }
}

/// Tanh saturation of one tone: returns the effective pair and, for the
/// pullback, the symmetric Jacobian entries `(j_xx, j_xy, j_yy)`.
fn saturate(cap: f64, x: f64, y: f64) -> ((f64, f64), (f64, f64, f64)) {
    let c = cap / 2.0;
    let rho = x.hypot(y);
    let s = rho / c;
    if s < 1e-8 {
        return ((x, y), (1.0, 0.0, 1.0));
    }
    let th = s.tanh();
    let ratio = c * th / rho;
    let slope = 1.0 - th * th;
    let (ux, uy) = (x / rho, y / rho);
    let d = slope - ratio;
    ((x * ratio, y * ratio), (ratio + d * ux * ux, d * ux * uy, ratio + d * uy * uy))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Parametrization {
    PerSlice(PerSlice),
    PhaseOnly(PhaseOnly),
    Fourier(Fourier),
}

impl Parametrization {
    pub fn per_slice(caps: Vec<f64>, grid: TimeGrid) -> Self {
        Parametrization::PerSlice(PerSlice { caps, n: grid.n_slices() })
    }

    pub fn phase_only(caps: Vec<f64>, grid: TimeGrid, mask: Option<Vec<f64>>) -> Result<Self> {
        let n = grid.n_slices();
        let mask = mask.unwrap_or_else(|| vec![1.0; n]);
        if mask.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: mask.len() });
        }
        Ok(Parametrization::PhaseOnly(PhaseOnly { caps, mask }))
    }

    pub fn fourier(caps: Vec<f64>, omega0: f64, k: usize, grid: TimeGrid, mask: Option<Vec<f64>>) -> Result<Self> {
        Ok(Parametrization::Fourier(Fourier::new(caps, omega0, k, grid, true, mask)?))
    }

    pub fn caps(&self) -> &[f64] {
        match self {
            Parametrization::PerSlice(p) => &p.caps,
            Parametrization::PhaseOnly(p) => &p.caps,
            Parametrization::Fourier(p) => &p.caps,
        }
    }

    pub fn n_tones(&self) -> usize {
        self.caps().len()
    }

    pub fn n_slices(&self) -> usize {
        match self {
            Parametrization::PerSlice(p) => p.n,
            Parametrization::PhaseOnly(p) => p.mask.len(),
            Parametrization::Fourier(p) => p.mask.len(),
        }
    }

    pub fn n_params(&self) -> usize {
        let m = self.n_tones();
        match self {
            Parametrization::PerSlice(p) => 2 * m * p.n,
            Parametrization::PhaseOnly(p) => m * p.mask.len(),
            Parametrization::Fourier(p) => 2 * m * p.k,
        }
    }

    /// Whether the amplitude cap holds for every parameter vector, or only
    /// after [`Parametrization::project`].
    pub fn needs_projection(&self) -> bool {
        matches!(self, Parametrization::PerSlice(_))
    }

    /// True when the map cannot violate the cap at all.
    pub fn bounded(&self) -> bool {
        match self {
            Parametrization::PerSlice(_) => false,
            Parametrization::PhaseOnly(_) => true,
            Parametrization::Fourier(f) => f.saturate,
        }
    }

    fn check_len(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control parameters"));
        }
        Ok(())
    }

    pub fn controls(&self, p: &[f64]) -> Result<ControlMatrix> {
        self.check_len(p)?;
        let m = self.n_tones();
        Ok(match self {
            Parametrization::PerSlice(ps) => ControlMatrix::from_column_slice(2 * m, ps.n, p),
            Parametrization::PhaseOnly(po) => {
                let n = po.mask.len();
                ControlMatrix::from_fn(2 * m, n, |c, r| {
                    let j = c / 2;
                    let amp = po.caps[j] * po.mask[r] / 2.0;
                    let phi = p[r * m + j];
                    if c % 2 == 0 {
                        amp * phi.cos()
                    } else {
                        amp * phi.sin()
                    }
                })
            }
            Parametrization::Fourier(f) => {
                let mut u = f.raw(p);
                for r in 0..u.ncols() {
                    for j in 0..m {
                        let (x, y) = (u[(2 * j, r)], u[(2 * j + 1, r)]);
                        let (x, y) = if f.saturate { saturate(f.caps[j], x, y).0 } else { (x, y) };
                        u[(2 * j, r)] = x * f.mask[r];
                        u[(2 * j + 1, r)] = y * f.mask[r];
                    }
                }
                u
            }
        })
    }

    /// Vector-Jacobian product: maps `∂F/∂u` to `∂F/∂p`.
    pub fn pullback(&self, p: &[f64], grad_u: &ControlMatrix) -> Result<Vec<f64>> {
        self.check_len(p)?;
        let m = self.n_tones();
        if grad_u.nrows() != 2 * m || grad_u.ncols() != self.n_slices() {
            return Err(Error::DimensionMismatch { expected: 2 * m * self.n_slices(), got: grad_u.len() });
        }
        Ok(match self {
            Parametrization::PerSlice(_) => grad_u.as_slice().to_vec(),
            Parametrization::PhaseOnly(po) => {
                let n = po.mask.len();
                let mut g = vec![0.0; m * n];
                for r in 0..n {
                    for j in 0..m {
                        let amp = po.caps[j] * po.mask[r] / 2.0;
                        let phi = p[r * m + j];
                        g[r * m + j] = amp * (-phi.sin() * grad_u[(2 * j, r)] + phi.cos() * grad_u[(2 * j + 1, r)]);
                    }
                }
                g
            }
            Parametrization::Fourier(f) => {
                let n = f.mask.len();
                let raw = f.raw(p);
                let mut g_raw = ControlMatrix::zeros(2 * m, n);
                for r in 0..n {
                    for j in 0..m {
                        let gx = grad_u[(2 * j, r)] * f.mask[r];
                        let gy = grad_u[(2 * j + 1, r)] * f.mask[r];
                        let (bx, by) = if f.saturate {
                            let (_, (jxx, jxy, jyy)) = saturate(f.caps[j], raw[(2 * j, r)], raw[(2 * j + 1, r)]);
                            (jxx * gx + jxy * gy, jxy * gx + jyy * gy)
                        } else {
                            (gx, gy)
                        };
                        g_raw[(2 * j, r)] = bx;
                        g_raw[(2 * j + 1, r)] = by;
                    }
                }
                let mut g = vec![0.0; 2 * m * f.k];
                for c in 0..2 * m {
                    let scale = f.caps[c / 2] / 2.0;
                    for (q, row) in f.basis.iter().enumerate() {
                        let s: f64 = (0..n).map(|r| g_raw[(c, r)] * row[r]).sum();
                        g[c * f.k + q] = scale * s;
                    }
                }
                g
            }
        })
    }

    /// Radial projection onto the amplitude cap (per-slice mode only).
    pub fn project(&self, p: &mut [f64]) {
        if let Parametrization::PerSlice(ps) = self {
            let m = ps.caps.len();
            for r in 0..ps.n {
                for j in 0..m {
                    let base = r * 2 * m + 2 * j;
                    let (x, y) = (p[base], p[base + 1]);
                    let limit = ps.caps[j] / 2.0;
                    let rho = x.hypot(y);
                    if rho > limit {
                        p[base] = x * limit / rho;
                        p[base + 1] = y * limit / rho;
                    }
                }
            }
        }
    }

    /// Random starting point. Per-slice values come from a smooth curve through
    /// a few uniform knots: amplitudes in `[0, Ω̄]` and phases in `(−π, π]`.
    pub fn random_init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.n_tones();
        match self {
            Parametrization::PerSlice(ps) => {
                let mut p = vec![0.0; 2 * m * ps.n];
                for j in 0..m {
                    let amp = smooth_random(rng, ps.n, INIT_KNOTS, 0.0, ps.caps[j]);
                    let phase = smooth_random(rng, ps.n, INIT_KNOTS, -PI, PI);
                    for r in 0..ps.n {
                        p[r * 2 * m + 2 * j] = amp[r] / 2.0 * phase[r].cos();
                        p[r * 2 * m + 2 * j + 1] = amp[r] / 2.0 * phase[r].sin();
                    }
                }
                p
            }
            Parametrization::PhaseOnly(po) => {
                let n = po.mask.len();
                let mut p = vec![0.0; m * n];
                for j in 0..m {
                    let phase = smooth_random(rng, n, INIT_KNOTS, -PI, PI);
                    for r in 0..n {
                        p[r * m + j] = phase[r];
                    }
                }
                p
            }
            Parametrization::Fourier(f) => {
                let spread = 2.0 / (f.k as f64).sqrt();
                (0..2 * m * f.k).map(|_| rng.random_range(-spread..spread)).collect()
            }
        }
    }
}
