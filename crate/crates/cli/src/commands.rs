use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qudit_core::algebra::{angles_equiv, cz, hadamard, is_trivial_angle, pauli_x, validate_targets, QuditSpace};
use qudit_core::compiler::{
    compile_cz as compile, cz_additive_solution, deviation_aligned, lower, minimize_pulse_count, random_diagonal_family,
    sequence_to_unitary, verify_no_go_structure, GateSequence,
};
use qudit_core::grape::library::{scan_cr_time, CrOptions, CrPulseLibrary};
use qudit_core::grape::{scan_single_qudit_time, PulseSchedule, ScanOptions, TimeScan};
use qudit_core::hamiltonian::{mhz_to_rad, Blockade, LevelScheme, MaybeInfinite, TwoAtomConfig};
use qudit_core::noise::{
    benchmark_gate, predict_cz_infidelity, reoptimize_with_crosstalk, CrosstalkOptions, NoiseConfigJson, NoiseModel, Program,
    PulseSource, TargetedPulseSet, TrajectoryConfig,
};
use qudit_core::rng::stream;

use crate::manifest::{self, Recorder};
use crate::units::angle_label;
use crate::{Cli, CompileArgs, Failure, GateName, GateSpec, NogoArgs, PredictArgs, SimulateArgs, SynthArgs};

/// Hardware defaults shared by the commands, from `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hardware {
    #[serde(rename = "cap_MHz", default = "default_cap")]
    pub cap_mhz: f64,
    #[serde(rename = "V_MHz", default = "MaybeInfinite::infinite")]
    pub v_mhz: MaybeInfinite,
    /// Raised-cosine rise and fall of CR pulses, as a fraction of the duration.
    #[serde(default = "default_ramp")]
    pub ramp_fraction: f64,
}

fn default_cap() -> f64 {
    5.0
}

fn default_ramp() -> f64 {
    0.05
}

impl Default for Hardware {
    fn default() -> Self {
        Self { cap_mhz: default_cap(), v_mhz: MaybeInfinite::infinite(), ramp_fraction: default_ramp() }
    }
}

impl Hardware {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let hw: Hardware = match path {
            None => Hardware::default(),
            Some(p) => serde_json::from_str(&read(p)?)?,
        };
        if !(hw.cap_mhz > 0.0) || !(0.0..0.5).contains(&hw.ramp_fraction) {
            return Err(Failure::Validation(format!("invalid hardware config {hw:?}")).into());
        }
        hw.blockade()?;
        Ok(hw)
    }

    fn cap(&self) -> f64 {
        mhz_to_rad(self.cap_mhz)
    }

    fn blockade(&self) -> Result<Blockade> {
        Ok(match self.v_mhz.value()? {
            None => Blockade::Perfect,
            Some(v) => Blockade::Finite(mhz_to_rad(v)),
        })
    }

    fn cr_options(&self, blockade: Blockade, seed: u64) -> CrOptions {
        let mut opts = CrOptions::new(self.cap(), blockade);
        opts.ramp_fraction = self.ramp_fraction;
        opts.seed = seed;
        opts
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::Validation(msg.into()).into()
}

/// Default bracket in units of `1/Ω̄`.
fn default_bracket(spec: &GateSpec) -> (f64, f64) {
    match spec.gate {
        GateName::X | GateName::H => (0.25 * PI, spec.d as f64 * PI),
        GateName::Cr => (4.0, 10.0),
    }
}

enum Best {
    Schedule(PulseSchedule),
    Cr(qudit_core::grape::library::CrPulse),
}

fn run_scan(spec: &GateSpec, hw: &Hardware, seed: u64, rec: &mut Recorder) -> Result<(TimeScan, Best)> {
    let space = QuditSpace::new(spec.d)?;
    let cap = hw.cap();
    let (lo, hi) = default_bracket(spec);
    let t_min = spec.t_min.map_or(lo / cap, |t| t * 1e-6);
    let t_max = spec.t_max.map_or(hi / cap, |t| t * 1e-6);
    let scan = ScanOptions { points: spec.points, refine_points: 8, restarts: spec.restarts, seed, ..ScanOptions::default() };
    rec.seeds.push(seed);
    rec.note("gate", spec.gate);
    rec.note("d", spec.d);
    rec.note("t_range_us", [t_min * 1e6, t_max * 1e6]);
    rec.note("points", spec.points);
    rec.note("restarts", spec.restarts);
    match spec.gate {
        GateName::X | GateName::H => {
            if spec.theta.is_some() || spec.targets.is_some() {
                return Err(invalid("--theta and --targets only apply to cr"));
            }
            let gate = if spec.gate == GateName::X { pauli_x(space) } else { hadamard(space) };
            let s = scan_single_qudit_time(&gate, cap, t_min, t_max, &scan)?;
            let pulse = s.best.pulse.clone();
            Ok((s, Best::Schedule(pulse)))
        }
        GateName::Cr => {
            let theta = spec.theta.ok_or_else(|| invalid("cr needs --theta"))?;
            let targets = spec.targets.clone().unwrap_or_else(|| vec![1]);
            validate_targets(space, &targets)?;
            rec.note("theta", theta);
            rec.note("targets", &targets);
            let opts = hw.cr_options(hw.blockade()?, seed);
            let (s, pulse) = scan_cr_time(theta, t_min, t_max, &opts, &scan)?;
            Ok((s, Best::Cr(pulse)))
        }
    }
}

fn report_scan(s: &TimeScan, cap: f64) -> String {
    format!(
        "T_opt = {:.4} us ({:.4} pi/Omega, Omega*T = {:.4}), F = {:.6}",
        s.t_opt * 1e6,
        s.t_opt * cap / PI,
        s.t_opt * cap,
        s.best.fidelity
    )
}

fn check_converged(s: &TimeScan, threshold: f64) -> Result<()> {
    if s.best.fidelity < threshold {
        return Err(Failure::NotConverged(format!("best fidelity {:.6} below {threshold}", s.best.fidelity)).into());
    }
    Ok(())
}

pub fn synthesize(a: &SynthArgs, hw: &Hardware, seed: u64, rec: &mut Recorder) -> Result<()> {
    if a.library.is_some() && a.gate.gate != GateName::Cr {
        return Err(invalid("--library only stores cr pulses"));
    }
    let (s, best) = run_scan(&a.gate, hw, seed, rec)?;
    rec.write("scan.csv", &scan_csv(&s))?;
    match best {
        Best::Schedule(p) => {
            rec.write("pulse.json", &p.to_json()?)?;
            rec.write("pulse.csv", &p.to_csv())?;
        }
        Best::Cr(p) => {
            rec.write("pulse.json", &serde_json::to_string_pretty(&p)?)?;
            rec.write("pulse.csv", &p.schedule.to_csv())?;
            println!("chi = {:.6} rad", p.chi);
            if let Some(path) = &a.library {
                let mut lib = if path.exists() {
                    CrPulseLibrary::from_json(&read(path)?)?
                } else {
                    CrPulseLibrary::new(hw.cap(), hw.blockade()?)
                };
                if lib.blockade != hw.blockade()? || (lib.cap - hw.cap()).abs() > 1e-9 * hw.cap() {
                    return Err(invalid(format!("{} was built for different hardware", path.display())));
                }
                lib.insert(p);
                std::fs::write(path, lib.to_json()?).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    println!("{}", report_scan(&s, hw.cap()));
    check_converged(&s, ScanOptions::default().threshold)
}

fn scan_csv(s: &TimeScan) -> String {
    let mut rows: Vec<(f64, f64)> = s.curve.iter().chain(&s.refined).copied().collect();
    if !rows.iter().any(|r| r.0 == s.t_opt) {
        rows.push((s.t_opt, s.best.fidelity));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|a, b| a.0 == b.0);
    let mut out = String::from("T_us,best_F,t_opt\n");
    for (t, f) in rows {
        let _ = writeln!(out, "{:.6},{:.9},{}", t * 1e6, f, u8::from(t == s.t_opt));
    }
    out
}

pub fn scan_time(a: &crate::ScanArgs, hw: &Hardware, seed: u64, rec: &mut Recorder) -> Result<()> {
    let (s, _) = run_scan(&a.gate, hw, seed, rec)?;
    rec.write("scan.csv", &scan_csv(&s))?;
    println!("{}", report_scan(&s, hw.cap()));
    check_converged(&s, ScanOptions::default().threshold)
}

pub fn compile_cz(a: &CompileArgs, rec: &mut Recorder) -> Result<()> {
    rec.note("d", a.d);
    rec.note("max_tones", a.max_tones);
    rec.note("lower", a.lower);
    let mut seq = match a.max_tones {
        Some(k) => minimize_pulse_count(a.d, k)?,
        None => compile(a.d)?,
    };
    if a.lower {
        let n_ryd = a.n_ryd.min(a.d - 1);
        rec.note("n_ryd", n_ryd);
        seq = lower(&seq, &LevelScheme::standard(a.d, n_ryd)?, None)?;
    }
    let deviation = deviation_aligned(&sequence_to_unitary(&seq)?, &cz(QuditSpace::new(a.d)?))?;
    rec.write("sequence.json", &seq.to_json()?)?;
    println!("d = {}: entangling pulses {}, tone-weighted {}, deviation from CZ {:.2e}", a.d, seq.pulse_count(), seq.weighted_pulse_count(), deviation);
    Ok(())
}

/// Distinct non-trivial `(targets, θ)` pulses of a lowered sequence.
fn distinct_pulses(seq: &GateSequence) -> Vec<(Vec<usize>, f64)> {
    let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
    for (t, theta) in seq.cr_steps() {
        if !out.iter().any(|(u, th)| u.as_slice() == t && angles_equiv(*th, theta)) {
            out.push((t.to_vec(), theta));
        }
    }
    out
}

/// Adds minimal-time pulses for every angle the library lacks.
fn complete_library(lib: &mut CrPulseLibrary, angles: &[f64], opts: &CrOptions, seed: u64) -> Result<usize> {
    let scan = ScanOptions { points: 13, refine_points: 8, restarts: 4, seed, ..ScanOptions::default() };
    let mut added = 0;
    for &theta in angles {
        if is_trivial_angle(theta) || lib.contains(theta) {
            continue;
        }
        log::info!("synthesizing CR({theta:.4})");
        let (s, pulse) = scan_cr_time(theta, 4.0 / opts.cap, 10.0 / opts.cap, opts, &scan)?;
        log::info!("CR({theta:.4}): {}", report_scan(&s, opts.cap));
        lib.insert(pulse);
        added += 1;
    }
    Ok(added)
}

pub fn simulate(a: &SimulateArgs, hw: &Hardware, seed: Option<u64>, rec: &mut Recorder) -> Result<()> {
    let text = read(&a.sequence)?;
    let seq = GateSequence::from_json(&text)?;
    rec.note("sequence", serde_json::from_str::<serde_json::Value>(&text)?);
    let mut cfg = match &a.noise_config {
        Some(p) => NoiseConfigJson::from_json(&read(p)?)?,
        None => NoiseConfigJson::from_model(
            &NoiseModel::alkaline_earth_defaults(),
            &TrajectoryConfig::new(TrajectoryConfig::DEFAULT_N_TRAJ, 0),
        ),
    };
    if let Some(t) = a.tau_ryd {
        cfg.tau_ryd_us = t.0.map_or_else(MaybeInfinite::infinite, MaybeInfinite::Value);
    }
    if let Some(s) = a.sigma {
        cfg.detuning_sigma_khz = s;
    }
    if let Some(v) = a.var {
        cfg.intensity_rel_var = v;
    }
    if let Some(n) = a.n_traj {
        cfg.n_traj = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let model = cfg.model()?;
    let mut traj = cfg.trajectories()?;
    traj.substeps = a.substeps;
    rec.note("noise", &cfg);
    rec.note("substeps", a.substeps);
    rec.seeds.push(cfg.seed);

    let n_ryd = if seq.d == 2 { 1 } else { a.n_ryd.clamp(1, seq.d - 1) };
    let config = TwoAtomConfig::new(LevelScheme::standard(seq.d, n_ryd)?, model.blockade, model.crosstalk_delta)?;
    let lowered = lower(&seq, &config.scheme, None)?;
    let pulses = distinct_pulses(&lowered);
    let mut lib = match &a.library {
        Some(p) => CrPulseLibrary::from_json(&read(p)?)?,
        None => CrPulseLibrary::new(hw.cap(), model.blockade),
    };
    if lib.blockade != model.blockade {
        log::warn!("library pulses were optimized for a different blockade than the noise config");
    }
    let angles: Vec<f64> = pulses.iter().map(|p| p.1).collect();
    let opts = hw.cr_options(lib.blockade, cfg.seed);
    if complete_library(&mut lib, &angles, &opts, cfg.seed)? > 0 || a.library.is_none() {
        rec.write("library.json", &lib.to_json()?)?;
    }
    let targeted = if a.reoptimize {
        if model.crosstalk_delta.is_none() {
            return Err(invalid("--reoptimize needs delta_MHz in the noise config"));
        }
        let set = reoptimize_with_crosstalk(&config, &pulses, &lib, &CrosstalkOptions::new(lib.cap))?;
        for p in &set.pulses {
            println!("re-optimized CR{:?}({}): F = {:.6}", p.targets, angle_label(p.theta), p.fidelity);
        }
        rec.write("targeted_pulses.json", &set.to_json()?)?;
        Some(set)
    } else {
        match &a.targeted {
            Some(p) => Some(TargetedPulseSet::from_json(&read(p)?)?),
            None => None,
        }
    };
    let source: &dyn PulseSource = match &targeted {
        Some(set) => set,
        None => &lib,
    };
    let program = Program::new(&seq, &config, source)?;
    let result = benchmark_gate(&program, &model, &traj)?;
    rec.write("result.json", &result.to_json()?)?;
    println!("fidelity = {:.5} +- {:.5} over {} trajectories", result.fidelity, result.stderr, result.n_traj);
    for p in &result.per_pulse {
        println!("  {}: {:.4} us, Rydberg time {:.4} us, {:.2e} decays", p.label, p.duration_us, p.rydberg_time_us, p.mean_jumps);
    }
    Ok(())
}

pub fn predict_scaling(a: &PredictArgs, hw: &Hardware, seed: u64, rec: &mut Recorder) -> Result<()> {
    if a.d_max < 2 || !(a.tau > 0.0) {
        return Err(invalid("need --d-max >= 2 and --tau > 0"));
    }
    let cap = mhz_to_rad(a.omega.unwrap_or(hw.cap_mhz));
    let mut lib = match &a.library {
        Some(p) => CrPulseLibrary::from_json(&read(p)?)?,
        None => CrPulseLibrary::new(cap, hw.blockade()?),
    };
    if (lib.cap - cap).abs() > 1e-9 * cap {
        return Err(invalid("library cap differs from --omega"));
    }
    rec.note("d_max", a.d_max);
    rec.note("tau_us", a.tau);
    rec.note("omega_MHz", a.omega.unwrap_or(hw.cap_mhz));
    rec.seeds.push(seed);
    let mut angles = vec![PI];
    for d in 2..=a.d_max {
        angles.extend(compile(d)?.cr_steps().map(|(_, th)| th));
    }
    let mut opts = hw.cr_options(lib.blockade, seed);
    opts.cap = cap;
    complete_library(&mut lib, &angles, &opts, seed)?;
    rec.write("library.json", &lib.to_json()?)?;
    let mut csv = String::from("d,product_infidelity,closed_form_infidelity,weighted_pulses,mean_duration_us\n");
    println!("{:>3} {:>12} {:>12} {:>7} {:>10}", "d", "product", "closed-form", "pulses", "T_avg(us)");
    for d in 2..=a.d_max {
        let p = predict_cz_infidelity(d, a.tau * 1e-6, &lib)?;
        let _ = writeln!(csv, "{d},{:.9e},{:.9e},{},{:.6}", p.product_infidelity, p.closed_form_infidelity, p.weighted_count, p.mean_duration * 1e6);
        println!("{d:>3} {:>12.5e} {:>12.5e} {:>7} {:>10.4}", p.product_infidelity, p.closed_form_infidelity, p.weighted_count, p.mean_duration * 1e6);
    }
    rec.write("scaling.csv", &csv)?;
    Ok(())
}

#[derive(Serialize)]
struct NogoReport {
    d: usize,
    trials: usize,
    family_passed: usize,
    max_residual: f64,
    cz_additive_feasible: bool,
    cz_additive_solution: Option<Vec<f64>>,
}

pub fn check_nogo(a: &NogoArgs, seed: u64, rec: &mut Recorder) -> Result<()> {
    QuditSpace::new(a.d)?;
    rec.note("d", a.d);
    rec.note("trials", a.trials);
    rec.seeds.push(seed);
    let mut rng = stream(seed, 0);
    let mut passed = 0;
    let mut max_residual: f64 = 0.0;
    for _ in 0..a.trials {
        let level = rand::Rng::random_range(&mut rng, 1..a.d);
        let seq = random_diagonal_family(&mut rng, a.d, level, 6);
        let v = verify_no_go_structure(&seq)?;
        max_residual = max_residual.max(v.residual);
        passed += usize::from(v.diagonal && v.additive);
    }
    let solution = cz_additive_solution(a.d)?;
    let report = NogoReport {
        d: a.d,
        trials: a.trials,
        family_passed: passed,
        max_residual,
        cz_additive_feasible: solution.is_some(),
        cz_additive_solution: solution,
    };
    rec.write("nogo.json", &serde_json::to_string_pretty(&report)?)?;
    let suite = if passed == a.trials { "PASS" } else { "FAIL" };
    println!("{suite}: {passed}/{} single-level sequences are diagonal and additive (max residual {max_residual:.2e})", a.trials);
    if report.cz_additive_feasible {
        println!("d = {}: CZ phases admit an additive solution; one Rydberg-coupled level can suffice", a.d);
    } else {
        println!("d = {}: CZ phases admit no additive solution; a single-tone global scheme cannot realize CZ", a.d);
    }
    if passed != a.trials {
        bail!("constructive-family suite failed");
    }
    Ok(())
}

pub fn rerun(path: &Path, out_dir: &Path) -> Result<()> {
    use clap::Parser;
    let old = manifest::load(path)?;
    let mut cli = Cli::try_parse_from(std::iter::once("qudit".to_string()).chain(old.args.iter().cloned()))
        .map_err(|e| invalid(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, crate::Command::Rerun(_)) {
        return Err(invalid("manifest records a rerun"));
    }
    let source_dir = path.parent().unwrap_or(Path::new("."));
    if out_dir.canonicalize().ok() == source_dir.canonicalize().ok() {
        return Err(invalid("choose an --out-dir different from the manifest's directory"));
    }
    cli.out_dir = out_dir.to_path_buf();
    let mut args = old.args.clone();
    replace_out_dir(&mut args, out_dir);
    // a failed rerun still writes its manifest; compare whatever it produced
    let outcome = crate::run(cli, args);
    let new = manifest::load(&out_dir.join(manifest::MANIFEST_FILE))?;
    let bad = manifest::mismatches(&old, &new);
    if bad.is_empty() {
        println!("reproduced {} outputs of `{}` bit for bit", old.outputs.len(), old.command);
        outcome
    } else {
        bail!("outputs differ from the manifest: {}", bad.join(", "))
    }
}

fn replace_out_dir(args: &mut Vec<String>, out_dir: &Path) {
    let dir = out_dir.display().to_string();
    let mut i = 0;
    let mut found = false;
    while i < args.len() {
        if args[i] == "--out-dir" && i + 1 < args.len() {
            args[i + 1] = dir.clone();
            found = true;
            i += 1;
        } else if args[i].starts_with("--out-dir=") {
            args[i] = format!("--out-dir={dir}");
            found = true;
        }
        i += 1;
    }
    if !found {
        args.push("--out-dir".into());
        args.push(dir);
    }
}
