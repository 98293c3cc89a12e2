//! Complex drive envelopes sampled on a time grid, with JSON and CSV forms.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::param::FourierParams;
use crate::algebra::{cis, C64};
use crate::dynamics::{ControlMatrix, TimeGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{mhz_to_rad, rad_to_mhz};

pub const SCHEMA_VERSION: u32 = 1;

/// A driven transition and its Rabi-frequency cap (rad/s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneSpec {
    pub lower: usize,
    pub upper: usize,
    pub cap: f64,
}

/// Per-tone piecewise-constant envelopes `Ω_j(t_r)` in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PulseScheduleJson", try_from = "PulseScheduleJson")]
pub struct PulseSchedule {
    pub tones: Vec<ToneSpec>,
    pub grid: TimeGrid,
    /// `samples[j][r]`
    pub samples: Vec<Vec<C64>>,
    pub fourier: Option<FourierParams>,
}

impl PulseSchedule {
    pub fn new(tones: Vec<ToneSpec>, grid: TimeGrid, samples: Vec<Vec<C64>>) -> Result<Self> {
        if samples.len() != tones.len() {
            return Err(Error::DimensionMismatch { expected: tones.len(), got: samples.len() });
        }
        for (tone, s) in tones.iter().zip(&samples) {
            if s.len() != grid.n_slices() {
                return Err(Error::DimensionMismatch { expected: grid.n_slices(), got: s.len() });
            }
            if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite("pulse samples"));
            }
            if s.iter().any(|z| z.norm() > tone.cap * (1.0 + 1e-9)) {
                return Err(Error::InvalidTones(format!("samples exceed the cap on tone {}<->{}", tone.lower, tone.upper)));
            }
        }
        Ok(Self { tones, grid, samples, fourier: None })
    }

    pub fn from_controls(tones: Vec<ToneSpec>, grid: TimeGrid, u: &ControlMatrix) -> Result<Self> {
        if u.nrows() != 2 * tones.len() || u.ncols() != grid.n_slices() {
            return Err(Error::DimensionMismatch { expected: 2 * tones.len() * grid.n_slices(), got: u.len() });
        }
        let samples = (0..tones.len())
            .map(|j| (0..grid.n_slices()).map(|r| C64::new(2.0 * u[(2 * j, r)], 2.0 * u[(2 * j + 1, r)])).collect())
            .collect();
        Self::new(tones, grid, samples)
    }

    /// Control amplitudes `u_{2j} = Re Ω_j / 2`, `u_{2j+1} = Im Ω_j / 2`.
    pub fn controls(&self) -> ControlMatrix {
        ControlMatrix::from_fn(2 * self.tones.len(), self.grid.n_slices(), |m, r| {
            let z = self.samples[m / 2][r];
            if m % 2 == 0 {
                z.re / 2.0
            } else {
                z.im / 2.0
            }
        })
    }

    pub fn duration(&self) -> f64 {
        self.grid.duration()
    }

    /// Complex-conjugated envelopes, which realize the conjugate propagator
    /// for real-symmetric drive generators.
    pub fn conjugate(&self) -> Self {
        let samples = self.samples.iter().map(|s| s.iter().map(|z| z.conj()).collect()).collect();
        let fourier = self.fourier.as_ref().map(|f| {
            let flip = |rows: &Vec<Vec<f64>>| {
                rows.iter()
                    .enumerate()
                    .map(|(m, row)| if m % 2 == 1 { row.iter().map(|v| -v).collect() } else { row.clone() })
                    .collect()
            };
            FourierParams { omega0: f.omega0, k: f.k, a: flip(&f.a), b: flip(&f.b) }
        });
        Self { tones: self.tones.clone(), grid: self.grid, samples, fourier }
    }

    /// Largest `|Ω_j|/Ω̄_j` over all tones and samples.
    pub fn max_amplitude_fraction(&self) -> f64 {
        self.tones
            .iter()
            .zip(&self.samples)
            .flat_map(|(t, s)| s.iter().map(move |z| z.norm() / t.cap))
            .fold(0.0, f64::max)
    }

    /// Continuous phase of tone `j` and the number of 2π wraps removed at
    /// each sample relative to the principal branch.
    pub fn unwrapped_phase(&self, j: usize) -> (Vec<f64>, Vec<i64>) {
        let mut phases = Vec::with_capacity(self.grid.n_slices());
        let mut wraps = Vec::with_capacity(self.grid.n_slices());
        let mut offset = 0i64;
        let mut prev: Option<f64> = None;
        for z in &self.samples[j] {
            let raw = z.arg();
            if let Some(p) = prev {
                let principal_prev = p - offset as f64 * TAU;
                let jump = raw - principal_prev;
                if jump > PI {
                    offset -= 1;
                } else if jump < -PI {
                    offset += 1;
                }
            }
            let value = raw + offset as f64 * TAU;
            phases.push(value);
            wraps.push(offset);
            prev = Some(value);
        }
        (phases, wraps)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PulseScheduleJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PulseScheduleJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    /// One row per slice midpoint: `t_us`, then `amp_frac`, `phase_rad`
    /// (unwrapped) and `wrap` for every tone.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us");
        for t in &self.tones {
            let _ = write!(out, ",amp_{0}_{1},phase_{0}_{1},wrap_{0}_{1}", t.lower, t.upper);
        }
        out.push('\n');
        let unwrapped: Vec<_> = (0..self.tones.len()).map(|j| self.unwrapped_phase(j)).collect();
        for r in 0..self.grid.n_slices() {
            let _ = write!(out, "{:.9}", self.grid.midpoint(r) * 1e6);
            for (j, tone) in self.tones.iter().enumerate() {
                let amp = self.samples[j][r].norm() / tone.cap;
                let _ = write!(out, ",{:.9},{:.9},{}", amp, unwrapped[j].0[r], unwrapped[j].1[r]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ToneJson {
    lower: usize,
    upper: usize,
    #[serde(rename = "cap_MHz")]
    cap_mhz: f64,
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    #[serde(rename = "T_us")]
    t_us: f64,
    #[serde(rename = "N")]
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    amplitude_frac: f64,
    phase_rad: f64,
}

#[derive(Serialize, Deserialize)]
struct PulseScheduleJson {
    schema_version: u32,
    tones: Vec<ToneJson>,
    grid: GridJson,
    samples: Vec<Vec<SampleJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fourier: Option<FourierParams>,
}

impl From<PulseSchedule> for PulseScheduleJson {
    fn from(p: PulseSchedule) -> Self {
        (&p).into()
    }
}

impl From<&PulseSchedule> for PulseScheduleJson {
    fn from(p: &PulseSchedule) -> Self {
        let samples = (0..p.tones.len())
            .map(|j| {
                let (phases, _) = p.unwrapped_phase(j);
                p.samples[j]
                    .iter()
                    .zip(phases)
                    .map(|(z, phase_rad)| SampleJson { amplitude_frac: z.norm() / p.tones[j].cap, phase_rad })
                    .collect()
            })
            .collect();
        PulseScheduleJson {
            schema_version: SCHEMA_VERSION,
            tones: p
                .tones
                .iter()
                .map(|t| ToneJson { lower: t.lower, upper: t.upper, cap_mhz: rad_to_mhz(t.cap) })
                .collect(),
            grid: GridJson { t_us: p.grid.duration() * 1e6, n: p.grid.n_slices() },
            samples,
            fourier: p.fourier.clone(),
        }
    }
}

impl TryFrom<PulseScheduleJson> for PulseSchedule {
    type Error = Error;

    fn try_from(raw: PulseScheduleJson) -> Result<Self> {
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported pulse schema version {} (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        let grid = TimeGrid::new(raw.grid.t_us * 1e-6, raw.grid.n)?;
        let tones: Vec<ToneSpec> = raw
            .tones
            .iter()
            .map(|t| ToneSpec { lower: t.lower, upper: t.upper, cap: mhz_to_rad(t.cap_mhz) })
            .collect();
        let samples = raw
            .samples
            .iter()
            .zip(&tones)
            .map(|(s, tone)| s.iter().map(|x| cis(x.phase_rad) * (x.amplitude_frac * tone.cap)).collect())
            .collect();
        let mut schedule = PulseSchedule::new(tones, grid, samples)?;
        schedule.fourier = raw.fourier;
        Ok(schedule)
    }
}
