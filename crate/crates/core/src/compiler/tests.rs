use super::*;
use crate::algebra::{cz, diagonal_phases};
use crate::rng::stream;
use std::f64::consts::PI;

fn assert_realizes_cz(seq: &GateSequence) {
    let u = sequence_to_unitary(seq).unwrap();
    let target = cz(QuditSpace::new(seq.d).unwrap());
    let dev = deviation_aligned(&u, &target).unwrap();
    assert!(dev < 1e-9, "d = {}: deviation {dev:e}", seq.d);
}

#[test]
fn phase_matrix_examples() {
    let p = cz_phase_matrix(3).unwrap();
    for (j, m) in [(1, 1), (2, 2), (1, 2), (2, 1)] {
        assert!(crate::algebra::angles_equiv(p.get(j, m), 4.0 * PI / 3.0), "({j},{m})");
    }
    assert!(crate::algebra::angles_equiv(cz_phase_matrix(2).unwrap().get(1, 1), PI));
    assert!(is_trivial_angle(cz_phase_matrix(4).unwrap().get(2, 2)));
}

#[test]
fn compiled_cz_is_exact_for_small_d() {
    for d in 2..=8 {
        assert_realizes_cz(&compile_cz(d).unwrap());
    }
    let seq = compile_cz(3).unwrap();
    let expected = [(vec![1], 4.0 * PI / 3.0), (vec![2], 4.0 * PI / 3.0), (vec![1, 2], 4.0 * PI / 3.0)];
    assert_eq!(seq.pulse_count(), 3);
    for ((targets, theta), (t, th)) in seq.cr_steps().zip(expected) {
        assert_eq!(targets, t.as_slice());
        assert!(crate::algebra::angles_equiv(theta, th));
    }
    assert_eq!(compile_cz(2).unwrap().pulse_count(), 1);
    assert_eq!(compile_cz(5).unwrap().pulse_count(), 10);
}

#[test]
fn single_rydberg_qutrit_sequence() {
    let seq = compile_cz_qutrit_single_rydberg();
    assert_realizes_cz(&seq);
    assert!(seq.cr_steps().all(|(t, _)| t == [2]));
    // after X⊗X and the first pulse, |0,0⟩ sits in |1,1⟩ without a phase
    let partial = GateSequence { d: 3, steps: seq.steps[..2].to_vec() };
    let u = sequence_to_unitary(&partial).unwrap();
    let col = u.matrix().column(0);
    assert!((col[4] - C64::new(1.0, 0.0)).norm() < 1e-12);
    // after the second round |0,0⟩ sits in |2,2⟩ and has picked up 4π/3
    let partial = GateSequence { d: 3, steps: seq.steps[..4].to_vec() };
    let u = sequence_to_unitary(&partial).unwrap();
    assert!((u.matrix()[(8, 0)] - cis(4.0 * PI / 3.0)).norm() < 1e-12);
}

#[test]
fn empty_and_single_pulse_sequences() {
    let u = sequence_to_unitary(&GateSequence::new(4)).unwrap();
    assert!(u.max_abs_diff(&QuditGate::identity(16)) < 1e-15);
    let mut seq = GateSequence::new(4);
    seq.steps.push(Step::cr(&[1, 3], 0.7));
    let u = sequence_to_unitary(&seq).unwrap();
    let direct = cr(QuditSpace::new(4).unwrap(), &[1, 3], 0.7).unwrap();
    assert!(u.max_abs_diff(&direct) < 1e-15);
    seq.steps.push(Step::cr(&[0], 0.7));
    assert!(sequence_to_unitary(&seq).is_err());
}

#[test]
fn sequence_json_round_trip() {
    let seq = compile_cz_qutrit_single_rydberg();
    let back = GateSequence::from_json(&seq.to_json().unwrap()).unwrap();
    assert_eq!(back, seq);
    let text = seq.to_json().unwrap();
    assert!(text.contains("\"type\": \"single\"") && text.contains("\"type\": \"cr\""));
}

#[test]
fn minimal_pulse_counts() {
    assert_eq!(minimize_pulse_count(2, 1).unwrap().pulse_count(), 1);
    assert_eq!(minimize_pulse_count(3, 2).unwrap().pulse_count(), 3);
    let four = minimize_pulse_count(4, 2).unwrap();
    assert_eq!(four.pulse_count(), 3);
    assert_realizes_cz(&four);
    let five = minimize_pulse_count(5, 2).unwrap();
    assert_eq!(five.pulse_count(), 10);
    assert_realizes_cz(&five);
    assert!(matches!(minimize_pulse_count(3, 1), Err(Error::Infeasible(_))));
    assert!(minimize_pulse_count(3, 3).is_err());
}

#[test]
fn lowering_routes_through_two_rydberg_levels() {
    let scheme = LevelScheme::standard(5, 2).unwrap();
    let seq = compile_cz(5).unwrap();
    let lowered = lower(&seq, &scheme, None).unwrap();
    assert_realizes_cz(&lowered);
    assert!(lowered.cr_steps().all(|(t, _)| t.iter().all(|l| [1, 2].contains(l))));
    assert_eq!(lowered.pulse_count(), 10);
    // pulses carrying a local phase are followed by cancelling frame updates
    let chi = |theta: f64| Ok(0.3 * theta + 0.1);
    let lowered = lower(&seq, &scheme, Some(&chi)).unwrap();
    assert_realizes_cz(&lowered);
    let three = minimize_pulse_count(5, 3).unwrap();
    assert!(lower(&three, &scheme, None).is_err());
}

#[test]
fn additive_structure_certificates() {
    assert!(cz_additive_solution(2).unwrap().is_some());
    assert!(cz_additive_solution(3).unwrap().is_some());
    for d in 4..=8 {
        assert!(cz_additive_solution(d).unwrap().is_none(), "d = {d}");
    }
    let verdict = verify_no_go_structure(&compile_cz_qutrit_single_rydberg()).unwrap();
    assert!(verdict.diagonal && verdict.additive, "{verdict:?}");
    for trial in 0..200 {
        let seq = random_diagonal_family(&mut stream(99, trial), 4, 2, 4);
        let v = verify_no_go_structure(&seq).unwrap();
        assert!(v.diagonal && v.residual < ADDITIVE_TOL, "trial {trial}: {v:?}");
    }
    assert!(verify_no_go_structure(&compile_cz(3).unwrap()).is_err());
}

#[test]
fn non_diagonal_outcomes_are_reported() {
    let mut seq = GateSequence::new(4);
    seq.steps.push(Step::Single { gate: pauli_x(QuditSpace::new(4).unwrap()) });
    seq.steps.push(Step::cr(&[2], 1.0));
    let v = verify_no_go_structure(&seq).unwrap();
    assert!(!v.diagonal && !v.additive);
    let mut seq = GateSequence::new(4);
    seq.steps.push(Step::Single { gate: diagonal_phases(&[0.0, 0.1, 0.2, 0.3]) });
    assert!(verify_no_go_structure(&seq).unwrap().additive);
}
