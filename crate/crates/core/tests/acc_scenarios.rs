use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

use zcbf::acc::{
    acc_barrier, acc_clf, acc_controller, acc_probes, acc_qp_matrices, acc_system, run_tradeoff_sweep, simulate_acc,
    AccParams, AccState, BarrierOrientation,
};
use zcbf::barrier::{lie_derivatives_at, zcbf_residual_at, ScalarField};
use zcbf::qp::{solve_p2, solve_weighted, solve_weighted_closed_form, P2Instance, WeightedObjective};
use zcbf::sim::{check_forward_invariance, simulate, Perturbation};

fn acc_state() -> impl Strategy<Value = AccState> {
    (10.0..30.0f64, 10.0..30.0f64, 5.0..100.0f64).prop_map(|(v_l, v_f, d)| AccState::new(v_l, v_f, d))
}

fn safe_acc_state() -> impl Strategy<Value = AccState> {
    acc_state().prop_filter("inside the safe set", |x| x.d - 1.8 * x.v_f >= 0.0)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// The barrier row of the program is the barrier inequality written as
    /// `A z ≤ b`, so the two agree on every input.
    #[test]
    fn barrier_row_replays_the_barrier_inequality(x in acc_state(), t in 0.0..60.0f64, u in -2e4..2e4f64, delta in -10.0..10.0f64) {
        let p = AccParams::default();
        let (system, barrier) = (acc_system(&p), acc_barrier(&p).unwrap());
        let qp = acc_qp_matrices(&p, x);
        let xv = x.to_vector();
        let lie = lie_derivatives_at(&barrier, &system, t, &xv).unwrap();
        prop_assert!(rel_close(qp.a_zcbf[0], -lie.lg[0], 1e-12));
        prop_assert!(rel_close(lie.lg[0], -1.8 / p.mass, 1e-12));
        // Sign audit: with u = 0 the bound equals L_f h + α(h).
        prop_assert!(rel_close(qp.b_zcbf, lie.lf + barrier.alpha_of_h(&xv), 1e-12));

        let row = qp.b_zcbf - qp.a_zcbf.dot(&dvector![u, delta]);
        let residual = zcbf_residual_at(&barrier, &system, t, &xv, &dvector![u]).unwrap();
        prop_assert!(rel_close(row, residual, 1e-10));
        if residual.abs() > 1e-6 {
            prop_assert_eq!(row >= 0.0, residual >= 0.0);
        }
    }

    /// With the weight set to the identity both rows coincide with the
    /// min-norm program built from the certificates.
    #[test]
    fn rows_match_the_certificate_program(x in acc_state()) {
        let p = AccParams::default();
        let xv = x.to_vector();
        let inst = P2Instance::from_certificates(
            &acc_barrier(&p).unwrap(),
            &acc_clf(&p).unwrap(),
            &acc_system(&p),
            0.0,
            &xv,
        )
        .unwrap();
        let [clf, cbf] = inst.constraints();
        let qp = acc_qp_matrices(&p, x);
        prop_assert!((&clf.normal - &qp.a_clf).amax() <= 1e-15);
        prop_assert!(rel_close(clf.bound, qp.b_clf, 1e-12));
        prop_assert!((&cbf.normal - &qp.a_zcbf).amax() <= 1e-15);
        prop_assert!(rel_close(cbf.bound, qp.b_zcbf, 1e-12));

        let closed = solve_p2(&inst).unwrap();
        let oracle = solve_weighted(
            &WeightedObjective::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).unwrap(),
            &qp.constraints(),
        )
        .unwrap();
        prop_assert!((&closed.minimizer - &oracle.minimizer).amax() <= 1e-8 * (1.0 + oracle.minimizer.amax()));
    }

    #[test]
    fn weighted_program_matches_closed_form(x in acc_state(), p_sc in prop::sample::select(vec![1e-5, 1e-2, 1.0, 100.0])) {
        let p = AccParams { p_sc, ..AccParams::default() };
        let qp = acc_qp_matrices(&p, x);
        let obj = qp.objective().unwrap();
        let oracle = solve_weighted(&obj, &qp.constraints()).unwrap();
        let closed = solve_weighted_closed_form(&obj, &qp.constraints()).unwrap();
        let tol = 1e-8 * (1.0 + oracle.minimizer.amax());
        prop_assert!((&closed.minimizer - &oracle.minimizer).amax() <= tol);
    }

    /// Inside the safe set the filtered input keeps `ḣ + α(h) ≥ 0`.
    #[test]
    fn closed_loop_satisfies_the_barrier_inequality_in_the_safe_set(x in safe_acc_state(), t in 0.0..60.0f64) {
        let p = AccParams::default();
        let (system, barrier) = (acc_system(&p), acc_barrier(&p).unwrap());
        let xv = x.to_vector();
        let u = acc_controller(&p)(t, &xv).unwrap().input;
        let residual = zcbf_residual_at(&barrier, &system, t, &xv, &u).unwrap();
        prop_assert!(residual >= -1e-9, "residual {residual}");
    }
}

#[test]
fn nominal_run_replays_as_admissible() {
    let p = AccParams::default();
    let traj = simulate_acc(&p, false, 60.0, 1e-3).unwrap();
    let (system, barrier) = (acc_system(&p), acc_barrier(&p).unwrap());
    let mut worst = f64::INFINITY;
    for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&traj.inputs) {
        worst = worst.min(zcbf_residual_at(&barrier, &system, *t, x, u).unwrap());
    }
    assert!(worst >= -1e-9, "worst replayed residual {worst}");
    assert!(traj.kkt_residuals.iter().all(|r| *r <= 1e-8));
    assert!(check_forward_invariance(&traj, 0.0, 1e-6).holds);
}

#[test]
fn perturbed_run_accelerates_then_follows_the_lead() {
    let p = AccParams::default();
    let traj = simulate_acc(&p, true, 60.0, 1e-3).unwrap();
    let v_f: Vec<f64> = traj.states.iter().map(|x| x[1]).collect();
    let (peak_idx, peak) = v_f
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    // The unmodelled grade can push the follower a little past v_d.
    assert!(peak > 21.0 && peak < p.v_d + 2.0, "peak follower speed {peak}");
    assert!(peak_idx > 0 && peak_idx < traj.len() - 1);
    let last = traj.final_state().unwrap();
    assert!((last[1] - last[0]).abs() <= 1.0, "final speeds {} vs {}", last[1], last[0]);
    assert!(traj.min_h() >= -p.gamma_max().unwrap());
    // Braking is needed once the lead slows down.
    assert!(traj.min_input(0) < 0.0);
}

#[test]
fn inverted_barrier_leaves_the_headway_set() {
    let p = AccParams {
        orientation: BarrierOrientation::Inverted,
        ..AccParams::default()
    };
    let traj = simulate_acc(&p, false, 60.0, 1e-3).unwrap();
    let headway = acc_barrier(&AccParams::default()).unwrap();
    let true_min = traj.states.iter().map(|x| headway.value(x)).fold(f64::INFINITY, f64::min);
    assert!(true_min < -1.0, "true headway barrier minimum {true_min}");
    // The recorded barrier is the true one, not the controller's.
    assert_eq!(traj.min_h(), true_min);
}

/// A disturbance proportional to `h` vanishes on the boundary, so the
/// nominal set stays invariant up to the sample-and-hold error, which is
/// first order in the step.
#[test]
fn vanishing_disturbance_keeps_the_set_invariant() {
    let p = AccParams::default();
    let (kappa, tau) = (p.kappa, p.tau_des);
    let perturbation = Perturbation::vanishing(move |x: &DVector<f64>| {
        let h = x[2] - tau * x[1];
        dvector![0.0, 0.0, -0.5 * kappa * h]
    });
    let min_h = |dt: f64| {
        simulate(
            &acc_system(&p),
            acc_controller(&p),
            &perturbation,
            &acc_probes(&p).unwrap(),
            p.initial.to_vector(),
            60.0,
            dt,
        )
        .unwrap()
        .min_h()
    };
    let (coarse, fine) = (min_h(1e-3), min_h(5e-4));
    assert!(coarse >= -0.1 * 1e-3, "min h {coarse}");
    assert!(fine >= -0.1 * 5e-4, "min h {fine}");
    if coarse < 0.0 {
        assert!(fine >= 0.6 * coarse, "violation {coarse} -> {fine} does not shrink with the step");
    }
}

#[test]
fn sweep_violation_shrinks_with_gain_and_grows_with_disturbance() {
    let p = AccParams::default();
    let kappas = [2.0, 5.0, 9.0];
    let bounds = [0.0, 0.15, 0.35];
    let cells = run_tradeoff_sweep(&p, &kappas, &bounds, 40.0, 1e-3).unwrap();
    assert_eq!(cells.len(), 9);
    let v: Vec<f64> = cells.iter().map(|c| -c.outcome.as_ref().unwrap().min_h).collect();
    for (i, c) in cells.iter().enumerate() {
        assert_eq!((c.kappa, c.theta_bound), (kappas[i / 3], bounds[i % 3]));
        let s = c.outcome.as_ref().unwrap();
        if c.theta_bound > 0.0 {
            assert!(s.gamma_plus_min_h > 0.0);
        } else {
            assert!(s.min_h >= -1e-6);
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            // Without disturbance h stays positive and its minimum carries no
            // ordering in κ.
            if i > 0 && j > 0 {
                assert!(v[3 * i + j] <= v[3 * (i - 1) + j]);
            }
            if j > 0 {
                assert!(v[3 * i + j] >= v[3 * i + j - 1]);
            }
        }
    }
}

#[test]
fn sweep_cells_equal_single_runs_bitwise() {
    let p = AccParams::default();
    let cells = run_tradeoff_sweep(&p, &[3.0, 7.0], &[0.2], 10.0, 1e-3).unwrap();
    for c in &cells {
        let q = AccParams {
            kappa: c.kappa,
            theta_amp: c.theta_bound,
            ..p.clone()
        };
        let traj = simulate_acc(&q, true, 10.0, 1e-3).unwrap();
        assert_eq!(c.outcome.as_ref().unwrap().min_h.to_bits(), traj.min_h().to_bits());
    }
}

#[test]
fn clf_tracks_the_desired_speed_without_a_lead() {
    // Lead far ahead: the barrier is slack and the follower converges to v_d.
    let p = AccParams {
        initial: AccState::new(30.0, 15.0, 1e4),
        lead_profile: zcbf::acc::LeadProfile::constant(0.0),
        ..AccParams::default()
    };
    let traj = simulate_acc(&p, false, 60.0, 1e-3).unwrap();
    let v_f = traj.final_state().unwrap()[1];
    assert!((v_f - p.v_d).abs() < 0.5, "final speed {v_f}");
    let clf = acc_clf(&p).unwrap();
    assert!(traj.v_values.last().unwrap() < &clf.value(&p.initial.to_vector()));
}

