use std::path::Path;
use std::process::{Command, Output};

use qudit_core::algebra::{cz, QuditSpace};
use qudit_core::compiler::{deviation_aligned, sequence_to_unitary, GateSequence};
use qudit_core::noise::SimResult;

fn qudit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qudit"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_sequence(dir: &Path) -> GateSequence {
    GateSequence::from_json(&std::fs::read_to_string(dir.join("sequence.json")).unwrap()).unwrap()
}

#[test]
fn compile_cz_counts_and_exactness() {
    let tmp = tempfile::tempdir().unwrap();
    for (args, pulses) in [(vec!["compile-cz", "--d", "2"], 1), (vec!["compile-cz", "--d", "3"], 3), (vec!["compile-cz", "--d", "5", "--max-tones", "3"], 7)] {
        let dir = tmp.path().join(args.join("_"));
        let o = qudit(&args, &dir);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let seq = read_sequence(&dir);
        assert_eq!(seq.pulse_count(), pulses, "{args:?}");
        let dev = deviation_aligned(&sequence_to_unitary(&seq).unwrap(), &cz(QuditSpace::new(seq.d).unwrap())).unwrap();
        assert!(dev < 1e-9);
        assert!(dir.join("manifest.json").exists());
    }
    let dir = tmp.path().join("lowered");
    let o = qudit(&["compile-cz", "--d", "4", "--lower"], &dir);
    assert!(o.status.success());
    assert!(read_sequence(&dir).cr_steps().all(|(t, _)| t.iter().all(|&l| l == 1 || l == 2)));
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(qudit(&["compile-cz", "--d", "1"], tmp.path()).status.code(), Some(2));
    assert_eq!(qudit(&["synthesize", "cr", "--d", "3"], tmp.path()).status.code(), Some(2));
    assert_eq!(qudit(&["synthesize", "cr", "--d", "3", "--theta", "pie"], tmp.path()).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"d": 3}"#).unwrap();
    let o = qudit(&["simulate", "--sequence", bad.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_bracket_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // 0.02 µs is far below the qutrit flip time at 5 MHz
    let o = qudit(&["scan-time", "x", "--d", "3", "--t-min", "0.01", "--t-max", "0.02", "--points", "3", "--restarts", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn qubit_flip_scan_marks_pi_time() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["synthesize", "x", "--d", "2", "--points", "9"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("scan.csv")).unwrap();
    let row = csv.lines().find(|l| l.ends_with(",1")).expect("marked row");
    let t_us: f64 = row.split(',').next().unwrap().parse().unwrap();
    // π/Ω̄ at Ω̄ = 2π × 5 MHz is 0.1 µs
    assert!((t_us - 0.1).abs() < 0.002, "{t_us}");
    for f in ["pulse.json", "pulse.csv", "manifest.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn nogo_report_distinguishes_three_from_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["check-nogo", "--d", "4", "--trials", "50"], &tmp.path().join("4"));
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS"));
    assert!(stdout(&o).contains("no additive solution"));
    let o = qudit(&["check-nogo", "--d", "3", "--trials", "50"], &tmp.path().join("3"));
    assert!(stdout(&o).contains("admit an additive solution"));
}

#[test]
fn noiseless_simulation_and_bitwise_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let seq_dir = tmp.path().join("seq");
    assert!(qudit(&["compile-cz", "--d", "2"], &seq_dir).status.success());
    let seq = seq_dir.join("sequence.json");
    let noise = tmp.path().join("noise.json");
    std::fs::write(
        &noise,
        r#"{"tau_ryd_us": "inf", "detuning_sigma_kHz": 0, "intensity_rel_var": 0, "V_MHz": "inf", "delta_MHz": null, "n_traj": 8, "seed": 1}"#,
    )
    .unwrap();
    let run = tmp.path().join("run");
    let o = qudit(&["simulate", "--sequence", seq.to_str().unwrap(), "--noise-config", noise.to_str().unwrap()], &run);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = SimResult::from_json(&std::fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert!(res.fidelity >= 0.9999, "{}", res.fidelity);

    // noisy run on one thread and on the default pool, then replay from the manifest
    let lib = run.join("library.json");
    let base = ["simulate", "--sequence", seq.to_str().unwrap(), "--library", lib.to_str().unwrap(), "--n-traj", "64", "--tau-ryd", "2", "--seed", "3"];
    let one = tmp.path().join("one");
    let mut args = base.to_vec();
    args.extend(["--threads", "1"]);
    assert!(qudit(&args, &one).status.success());
    let many = tmp.path().join("many");
    assert!(qudit(&base, &many).status.success());
    let a = std::fs::read_to_string(one.join("result.json")).unwrap();
    assert_eq!(a, std::fs::read_to_string(many.join("result.json")).unwrap());
    let o = Command::new(env!("CARGO_BIN_EXE_qudit"))
        .args(["rerun", one.join("manifest.json").to_str().unwrap(), "--out-dir", tmp.path().join("again").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bit for bit"));
}
