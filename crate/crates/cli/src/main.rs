// `!(x > 0.0)` rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::Recorder;

#[derive(Parser, Debug)]
#[command(name = "qudit", version, about = "Pulse synthesis, CZ compilation and noisy benchmarks for neutral-atom qudits")]
pub struct Cli {
    /// Master seed; commands derive every random stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for trajectories and scans (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Hardware defaults as JSON: {"cap_MHz", "V_MHz", "ramp_fraction"}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Find the minimal-time pulse for a gate and write it as JSON and CSV.
    Synthesize(SynthArgs),
    /// Compile the qudit CZ into controlled-phase pulses.
    CompileCz(CompileArgs),
    /// Quantum-jump benchmark of a compiled sequence.
    Simulate(SimulateArgs),
    /// Best fidelity against pulse duration.
    ScanTime(ScanArgs),
    /// Decay-limited CZ infidelity against qudit dimension.
    PredictScaling(PredictArgs),
    /// Additive-phase checks behind the two-tone requirement.
    CheckNogo(NogoArgs),
    /// Re-run a manifest and compare every output digest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GateName {
    X,
    H,
    Cr,
}

#[derive(Args, Debug, Clone)]
pub struct GateSpec {
    #[arg(value_enum)]
    pub gate: GateName,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Target levels of a CR pulse, e.g. `1,2`.
    #[arg(long, value_parser = units::parse_levels)]
    pub targets: Option<Vec<usize>>,
    /// CR angle, e.g. `4pi/3`.
    #[arg(long, value_parser = units::parse_angle, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Scan bracket in µs (default depends on the gate).
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, default_value_t = 13)]
    pub points: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub gate: GateSpec,
    /// Add the CR pulse to this library file (created if missing).
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    #[arg(long)]
    pub d: usize,
    /// Search for the fewest pulses driving at most this many tones each.
    #[arg(long)]
    pub max_tones: Option<usize>,
    /// Route onto two Rydberg-coupled levels with permutations and virtual phases.
    #[arg(long)]
    pub lower: bool,
    #[arg(long, default_value_t = 2)]
    pub n_ryd: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Sequence JSON from `compile-cz`.
    #[arg(long)]
    pub sequence: PathBuf,
    /// Noise config JSON; defaults to the alkaline-earth parameter set.
    #[arg(long)]
    pub noise_config: Option<PathBuf>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Rydberg lifetime in µs or `inf`.
    #[arg(long, value_parser = units::parse_maybe_inf)]
    pub tau_ryd: Option<units::MaybeInf>,
    /// Detuning spread in kHz.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Intensity spread.
    #[arg(long)]
    pub var: Option<f64>,
    /// CR pulse library; missing angles are synthesized.
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Pulses re-optimized for crosstalk, as written by `--reoptimize`.
    #[arg(long)]
    pub targeted: Option<PathBuf>,
    /// Re-optimize every CR pulse against the crosstalk Hamiltonian first.
    #[arg(long)]
    pub reoptimize: bool,
    #[arg(long, default_value_t = 2)]
    pub n_ryd: usize,
    #[arg(long, default_value_t = 1)]
    pub substeps: usize,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[command(flatten)]
    pub gate: GateSpec,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, default_value_t = 8)]
    pub d_max: usize,
    /// Rydberg lifetime in µs.
    #[arg(long, default_value_t = 60.0)]
    pub tau: f64,
    /// Rabi frequency cap in MHz.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Cached CR library; synthesized pulses are added and written back to the output directory.
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NogoArgs {
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synthesize(_) => "synthesize",
            Command::CompileCz(_) => "compile-cz",
            Command::Simulate(_) => "simulate",
            Command::ScanTime(_) => "scan-time",
            Command::PredictScaling(_) => "predict-scaling",
            Command::CheckNogo(_) => "check-nogo",
            Command::Rerun(_) => "rerun",
        }
    }
}

/// Distinguishes outcomes the exit code reports.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotConverged(String),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Validation(_) => 2,
            Failure::NotConverged(_) => 3,
        };
    }
    if let Some(e) = err.downcast_ref::<qudit_core::Error>() {
        use qudit_core::Error as E;
        return match e {
            E::Infeasible(_) | E::BracketFailure(_) | E::NormUnderflow { .. } => 3,
            _ => 2,
        };
    }
    if err.downcast_ref::<serde_json::Error>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    1
}

pub fn run(cli: Cli, args: Vec<String>) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Validation("--threads must be at least 1".into()).into());
        }
        // a second call only fails if a pool already exists, e.g. under rerun
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let threads = rayon::current_num_threads();
    if let Command::Rerun(r) = &cli.command {
        return commands::rerun(&r.manifest, &cli.out_dir);
    }
    let started = manifest::now();
    let hardware = commands::Hardware::load(cli.config.as_deref())?;
    let mut rec = Recorder::new(cli.out_dir.clone())?;
    rec.note("hardware", &hardware);
    let seed = cli.seed.unwrap_or(0);
    let result = match &cli.command {
        Command::Synthesize(a) => commands::synthesize(a, &hardware, seed, &mut rec),
        Command::CompileCz(a) => commands::compile_cz(a, &mut rec),
        Command::Simulate(a) => commands::simulate(a, &hardware, cli.seed, &mut rec),
        Command::ScanTime(a) => commands::scan_time(a, &hardware, seed, &mut rec),
        Command::PredictScaling(a) => commands::predict_scaling(a, &hardware, seed, &mut rec),
        Command::CheckNogo(a) => commands::check_nogo(a, seed, &mut rec),
        Command::Rerun(_) => unreachable!("handled above"),
    };
    // non-convergence still leaves its report and manifest behind
    let manifest = rec.finish(cli.command.name(), args, threads, started)?;
    log::info!("wrote {} outputs to {}", manifest.outputs.len(), cli.out_dir.display());
    result
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
