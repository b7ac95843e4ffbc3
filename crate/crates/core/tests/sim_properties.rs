use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

use zcbf::barrier::{ControlAffineSystem, DomainBox, ExtendedClassK, ZeroingBarrier};
use zcbf::qp::{solve_p1, P1Instance};
use zcbf::sim::{
    check_forward_invariance, check_vc_decrease, estimate_lipschitz, simulate, ControlOutput, IssLevel, Perturbation,
    Probes,
};

fn decay(rate: f64) -> ControlAffineSystem {
    ControlAffineSystem::new(1, 1, move |x| -x * rate, |_| DMatrix::zeros(1, 1)).unwrap()
}

fn open_loop(_: f64, _: &DVector<f64>) -> zcbf::Result<ControlOutput> {
    Ok(ControlOutput::open_loop(dvector![0.0]))
}

/// `ẋ = u + w`, `h = x`, barrier-only filter.
fn integrator_loop(gain: f64) -> (ControlAffineSystem, ZeroingBarrier) {
    let sys = ControlAffineSystem::new(1, 1, |_| dvector![0.0], |_| DMatrix::from_element(1, 1, 1.0)).unwrap();
    let b = ZeroingBarrier::new(|x| x[0], |_| dvector![1.0], ExtendedClassK::linear(gain).unwrap());
    (sys, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rk4_tracks_exponential_decay(rate in 0.1..5.0f64, x0 in -10.0..10.0f64) {
        let traj = simulate(&decay(rate), open_loop, &Perturbation::None, &Probes::default(), dvector![x0], 1.0, 1e-3).unwrap();
        let exact = x0 * (-rate).exp();
        prop_assert!((traj.final_state().unwrap()[0] - exact).abs() <= 1e-9 * (1.0 + x0.abs()));
        prop_assert_eq!(traj.len(), 1001);
    }

    /// Filtered integrator pushed outward at its disturbance bound: the
    /// violation never exceeds the level `B / κ`.
    #[test]
    fn filtered_integrator_respects_iss_level(gain in 0.5..10.0f64, bound in 0.0..2.0f64, x0 in 0.0..3.0f64) {
        let (sys, b) = integrator_loop(gain);
        let barrier = b.clone();
        let system = sys.clone();
        let controller = move |t: f64, x: &DVector<f64>| {
            let r = solve_p1(&P1Instance::from_certificates(&barrier, &system, t, x)?)?;
            Ok(ControlOutput { input: r.minimizer.clone(), delta: 0.0, qp: Some(r) })
        };
        let w = Perturbation::non_vanishing(dvector![1.0], move |_| -bound, bound);
        let probes = Probes { barrier: Some(b.clone()), clf: None };
        let traj = simulate(&sys, &controller, &w, &probes, dvector![x0], 10.0, 1e-3).unwrap();
        let eps = bound / gain;
        prop_assert!(check_forward_invariance(&traj, eps, 1e-6).holds, "min h {} eps {eps}", traj.min_h());

        let level = IssLevel::new(ExtendedClassK::linear(1.0 / gain).unwrap(), bound).unwrap();
        let outside: Vec<DVector<f64>> = (1..=50).map(|i| dvector![-eps - 0.01 * f64::from(i)]).collect();
        let report = check_vc_decrease(&sys, &controller, &w, &b, &level, &outside, 0.0);
        prop_assert!(report.holds());
        prop_assert_eq!(report.evaluated, 50);
    }

    #[test]
    fn lipschitz_estimate_of_a_linear_map_is_its_gain(k in prop::collection::vec(-5.0..5.0f64, 2), seed in any::<u64>()) {
        let k = DVector::from_vec(k);
        let kk = k.clone();
        let domain = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let est = estimate_lipschitz(move |x: &DVector<f64>| Ok(dvector![kk.dot(x)]), &domain, 500, seed);
        prop_assert!(est.max_quotient <= k.norm() * (1.0 + 1e-9));
        prop_assert!(est.max_quotient >= 0.0);
        prop_assert_eq!(est.failures, 0);
    }
}

#[test]
fn vc_decrease_fails_for_an_unfiltered_loop() {
    let (sys, b) = integrator_loop(1.0);
    let level = IssLevel::new(ExtendedClassK::linear(1.0).unwrap(), 0.5).unwrap();
    let w = Perturbation::non_vanishing(dvector![1.0], |_| 0.0, 0.5);
    let samples = vec![dvector![-2.0], dvector![-1.0], dvector![3.0]];
    let report = check_vc_decrease(&sys, open_loop, &w, &b, &level, &samples, 0.0);
    assert_eq!(report.evaluated, 2);
    assert_eq!(report.skipped, vec![2]);
    assert_eq!(report.violations.len(), 2);
    assert!(!report.holds());
}
