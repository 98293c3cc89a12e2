use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compiler::{compile_cz, GateSequence, Step};
use crate::dynamics::{ControlMatrix, TimeGrid};
use crate::grape::library::{optimize_cr_pulse, CrOptions, CrPulse, CrPulseLibrary};
use crate::grape::{PulseSchedule, ToneSpec};
use crate::hamiltonian::{LevelScheme, TwoAtomConfig};

fn cap() -> f64 {
    mhz_to_rad(5.0)
}

/// Optimized `CR(π)` under a perfect blockade, shared across tests.
fn library() -> &'static CrPulseLibrary {
    static LIB: OnceLock<CrPulseLibrary> = OnceLock::new();
    LIB.get_or_init(|| {
        let mut opts = CrOptions::new(cap(), Blockade::Perfect);
        opts.restarts = 2;
        let pulse = optimize_cr_pulse(PI, 8.0 / cap(), &opts).unwrap();
        assert!(pulse.fidelity > 0.9999, "{}", pulse.fidelity);
        let mut lib = CrPulseLibrary::new(cap(), Blockade::Perfect);
        lib.insert(pulse);
        lib
    })
}

fn qubit_cz() -> Program {
    let config = TwoAtomConfig::new(LevelScheme::standard(2, 1).unwrap(), Blockade::Perfect, None).unwrap();
    Program::new(&compile_cz(2).unwrap(), &config, library()).unwrap()
}

/// A constant resonant drive, not a gate: only used for decay statistics.
fn flat_program(duration: f64) -> Program {
    let grid = TimeGrid::new(duration, 100).unwrap();
    let controls = ControlMatrix::from_fn(2, 100, |c, _| if c == 0 { cap() / 2.0 } else { 0.0 });
    let schedule = PulseSchedule::from_controls(vec![ToneSpec { lower: 1, upper: 2, cap: cap() }], grid, &controls).unwrap();
    let mut lib = CrPulseLibrary::new(cap(), Blockade::Perfect);
    lib.insert(CrPulse { theta: 1.0, chi: 0.0, fidelity: 0.0, schedule });
    let config = TwoAtomConfig::new(LevelScheme::standard(2, 1).unwrap(), Blockade::Perfect, None).unwrap();
    let mut seq = GateSequence::new(2);
    seq.steps.push(Step::cr(&[1], 1.0));
    Program::new(&seq, &config, &lib).unwrap()
}

fn decay_only(tau: f64) -> NoiseModel {
    NoiseModel { tau_ryd: tau, ..NoiseModel::ideal(Blockade::Perfect) }
}

#[test]
fn shot_moments_match_the_model() {
    let model = NoiseModel { detuning_sigma: 3.0, intensity_rel_var: 0.01, ..NoiseModel::ideal(Blockade::Perfect) };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let shots: Vec<Shot> = (0..n).map(|_| sample_shot(&model, &mut rng)).collect();
    let nf = n as f64;
    let mean_d = shots.iter().map(|s| s.detuning).sum::<f64>() / nf;
    let var_d = shots.iter().map(|s| s.detuning.powi(2)).sum::<f64>() / nf;
    let intensity: Vec<f64> = shots.iter().map(|s| s.amplitude_scale.powi(2)).collect();
    let mean_i = intensity.iter().sum::<f64>() / nf;
    let var_i = intensity.iter().map(|i| (i - mean_i).powi(2)).sum::<f64>() / nf;
    assert!(mean_d.abs() < 3.0 * 3.0 / nf.sqrt(), "{mean_d}");
    assert!((var_d / 9.0 - 1.0).abs() < 3.0 * (2.0 / nf).sqrt(), "{var_d}");
    assert!((mean_i - 1.0).abs() < 3.0 * 0.01 / nf.sqrt(), "{mean_i}");
    assert!((var_i / 1e-4 - 1.0).abs() < 3.0 * (2.0 / nf).sqrt(), "{var_i}");

    let quiet = sample_shot(&NoiseModel::ideal(Blockade::Perfect), &mut rng);
    assert_eq!(quiet, Shot { detuning: 0.0, amplitude_scale: 1.0 });
}

#[test]
fn no_jump_probability_follows_the_decaying_norm() {
    let program = flat_program(1e-6);
    let tau = 4e-6;
    let model = decay_only(tau);
    let shot = Perturbation { decay_rate: 1.0 / tau, ..Perturbation::NONE };
    let (psi, _) = evolve(&program, &program.uniform_input(), shot, 1);
    let survival = psi.norm_squared();
    let (_, exposure) = evolve(&program, &program.uniform_input(), Perturbation::NONE, 1);
    // d‖ψ‖²/dt = −Γ⟨N⟩, so survival sits near e^{−Γ∫⟨N⟩} for weak decay
    assert!((survival.ln() + exposure[0] / tau).abs() < 0.02 * exposure[0] / tau, "{survival} {}", exposure[0]);

    let n = 4000;
    let res = benchmark_gate(&program, &model, &TrajectoryConfig::new(n, 3)).unwrap();
    let p0 = res.jumps[0] as f64 / n as f64;
    let sigma = (survival * (1.0 - survival) / n as f64).sqrt();
    assert!((p0 - survival).abs() < 4.0 * sigma, "{p0} vs {survival}");
    let expected = exposure[0] / tau;
    assert!((res.mean_jumps() - expected).abs() < 0.1 * expected, "{} vs {expected}", res.mean_jumps());
    assert!((res.per_pulse[0].mean_jumps - res.mean_jumps()).abs() < 1e-12);
}

#[test]
fn noiseless_cz_benchmark_is_exact() {
    let program = qubit_cz();
    let res = benchmark_gate(&program, &NoiseModel::ideal(Blockade::Perfect), &TrajectoryConfig::new(16, 0)).unwrap();
    assert!(res.fidelity >= 0.9999, "{}", res.fidelity);
    assert!(res.stderr < 1e-12);
    assert_eq!(res.jumps, vec![16]);
    assert!(residual_rydberg_population(&program) < 1e-4);
}

#[test]
fn parallel_and_serial_runs_agree() {
    let program = qubit_cz();
    let model = NoiseModel { tau_ryd: 2e-6, detuning_sigma: mhz_to_rad(0.2), intensity_rel_var: 0.02, ..NoiseModel::ideal(Blockade::Perfect) };
    let mut cfg = TrajectoryConfig::new(96, 42);
    let a = benchmark_gate(&program, &model, &cfg).unwrap();
    cfg.parallel = false;
    let b = benchmark_gate(&program, &model, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_jumps() > 0.0);
}

#[test]
fn fidelity_rises_with_lifetime() {
    let program = qubit_cz();
    let cfg = TrajectoryConfig::new(400, 9);
    let f: Vec<f64> = [3e-6, 12e-6, 48e-6]
        .iter()
        .map(|&tau| benchmark_gate(&program, &decay_only(tau), &cfg).unwrap().fidelity)
        .collect();
    assert!(f[0] < f[1] && f[1] < f[2], "{f:?}");
    assert!(f[2] > 0.99);
}

#[test]
fn halving_the_step_leaves_fidelity_unchanged() {
    let program = qubit_cz();
    let model = NoiseModel { tau_ryd: 20e-6, detuning_sigma: mhz_to_rad(0.1), intensity_rel_var: 0.01, ..NoiseModel::ideal(Blockade::Perfect) };
    let mut cfg = TrajectoryConfig::new(64, 5);
    let coarse = benchmark_gate(&program, &model, &cfg).unwrap();
    cfg.substeps = 2;
    let fine = benchmark_gate(&program, &model, &cfg).unwrap();
    assert!((coarse.fidelity - fine.fidelity).abs() < 1e-5, "{} {}", coarse.fidelity, fine.fidelity);
}

#[test]
fn mismatched_interaction_is_rejected() {
    let program = qubit_cz();
    let model = NoiseModel::ideal(Blockade::Finite(mhz_to_rad(100.0)));
    assert!(benchmark_gate(&program, &model, &TrajectoryConfig::new(1, 0)).is_err());
    let bad = NoiseModel { tau_ryd: -1.0, ..NoiseModel::ideal(Blockade::Perfect) };
    assert!(benchmark_gate(&program, &bad, &TrajectoryConfig::new(1, 0)).is_err());
}

#[test]
fn predictor_counts_and_closed_form() {
    // exposure ignores the angle, so one envelope can stand in for all of them
    let base = library().get(PI).unwrap();
    let mut lib = library().clone();
    for d in [3usize, 5] {
        for (_, theta) in compile_cz(d).unwrap().cr_steps() {
            if !lib.contains(theta) {
                lib.insert(CrPulse { theta, ..base.clone() });
            }
        }
    }
    let tau = 60e-6;
    let two = predict_cz_infidelity(2, tau, &lib).unwrap();
    assert_eq!(two.weighted_count, 1);
    assert!((two.product_infidelity - two.closed_form_infidelity).abs() < 1e-15);
    for d in [3usize, 5] {
        let p = predict_cz_infidelity(d, tau, &lib).unwrap();
        assert_eq!(p.weighted_count, (d - 1) * (d - 1));
        assert!((p.product_infidelity - p.closed_form_infidelity).abs() < 1e-12 * p.closed_form_infidelity.max(1.0));
    }
    assert!(pulse_exposure(&base, &lib).unwrap() > 0.0);
}

#[test]
fn noise_config_parses_infinite_fields() {
    let text = r#"{"tau_ryd_us": "inf", "detuning_sigma_kHz": 40, "intensity_rel_var": 0.008,
                  "V_MHz": 220, "delta_MHz": null, "seed": 7}"#;
    let cfg = NoiseConfigJson::from_json(text).unwrap();
    let model = cfg.model().unwrap();
    assert!(model.tau_ryd.is_infinite());
    assert!((model.detuning_sigma - mhz_to_rad(0.04)).abs() < 1e-9);
    assert_eq!(model.blockade, Blockade::Finite(mhz_to_rad(220.0)));
    let traj = cfg.trajectories().unwrap();
    assert_eq!((traj.n_traj, traj.seed), (TrajectoryConfig::DEFAULT_N_TRAJ, 7));
    let back = NoiseConfigJson::from_model(&model, &traj);
    assert_eq!(back.model().unwrap(), model);
    assert!(NoiseConfigJson::from_json(r#"{"tau_ryd_us": -1, "detuning_sigma_kHz": 0, "intensity_rel_var": 0, "V_MHz": "inf"}"#)
        .unwrap()
        .model()
        .is_err());
}

#[test]
fn compensated_sum_recovers_cancelled_terms() {
    assert_eq!(compensated_sum([1e16, 1.0, -1e16]), 1.0);
}
