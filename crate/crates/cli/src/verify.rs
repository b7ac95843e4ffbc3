//! Numerical self-checks behind the `verify` command. Each check reduces to a
//! worst-case residual compared against a fixed threshold.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use zcbf::acc::{acc_barrier, acc_clf, acc_controller, acc_perturbation, acc_qp_matrices, acc_system, AccParams, AccState};
use zcbf::barrier::{zcbf_residual_at, DomainBox, ExtendedClassK, ScalarField};
use zcbf::qp::corpus::{random_p1_instance, random_p2_instance, seeded_rng};
use zcbf::qp::{
    omega, solve_p1, solve_p2_relaxed, solve_p2_with_omega, solve_weighted, solve_weighted_closed_form, P2Instance,
    QpResult, WeightedObjective,
};
use zcbf::sim::{check_vc_decrease, estimate_lipschitz, iss_epsilon, simulate, ControlOutput, IssLevel, Perturbation, Probes};
use zcbf::Error;

use crate::config::{Mutation, RunConfig};
use crate::output::CheckRow;

fn flipped_omega(r: f64) -> f64 {
    -omega(r)
}

fn check(name: &'static str, worst: f64, pass: impl Fn(f64) -> bool) -> CheckRow {
    CheckRow {
        name,
        worst,
        pass: worst.is_finite() && pass(worst),
    }
}

fn acc_box() -> DomainBox {
    DomainBox::new(vec![10.0, 10.0, 5.0], vec![30.0, 30.0, 100.0]).expect("fixed box is valid")
}

fn min_norm(n: usize) -> WeightedObjective {
    WeightedObjective::new(DMatrix::identity(n, n) * 2.0, DVector::zeros(n)).expect("2I is positive definite")
}

pub fn run_checks(cfg: &RunConfig) -> Vec<CheckRow> {
    let n = cfg.verify.corpus_size;
    let mut rows = vec![check("gamma_max", gamma_gap(), |w| w <= 5e-4)];
    rows.extend(p1_checks(cfg.seed, n));
    rows.extend(p2_checks(cfg.seed.wrapping_add(1), n, cfg.verify.mutation));
    rows.push(check("weighted_acc_oracle_gap", weighted_acc_gap(&cfg.acc, cfg.seed.wrapping_add(2), n), |w| w <= 1e-8));
    rows.push(check("acc_barrier_row_replay", barrier_row_gap(&cfg.acc, cfg.seed.wrapping_add(3), n), |w| w <= 1e-10));
    rows.push(check("relaxation_bound", relaxation_excess(cfg.seed.wrapping_add(4), n), |w| w <= 1e-12));
    rows.push(check(
        "lipschitz_stability",
        lipschitz_log_ratio(&cfg.acc, cfg.seed.wrapping_add(5), cfg.verify.lipschitz_pairs),
        |w| w <= 1.0,
    ));
    rows.push(check("rk4_order", rk4_order_gap(), |w| w <= 1.0));
    rows.push(check(
        "vc_decrease",
        vc_max_derivative(&cfg.acc, cfg.seed.wrapping_add(6), cfg.verify.vc_samples),
        |w| w < 0.0,
    ));
    rows
}

fn gamma_gap() -> f64 {
    iss_epsilon(5.0, 9.81, 0.1).map_or(f64::INFINITY, |g| (g - 0.3532).abs())
}

fn p1_checks(seed: u64, n: usize) -> [CheckRow; 2] {
    let mut rng = seeded_rng(seed);
    let (mut gap, mut violation) = (0.0f64, 0.0f64);
    for i in 0..n {
        let inst = random_p1_instance(&mut rng, 1 + i % 3);
        let m = inst.lg_h.len();
        match (solve_p1(&inst), solve_weighted(&min_norm(m), &[inst.constraint()])) {
            (Ok(r), Ok(o)) => {
                gap = gap.max((&r.minimizer - &o.minimizer).amax());
                violation = violation.max(-(inst.lf_h + inst.lg_h.dot(&r.minimizer) + inst.alpha_h));
            }
            _ => gap = f64::INFINITY,
        }
    }
    [
        check("p1_oracle_gap", gap, |w| w <= 1e-10),
        check("p1_constraint_violation", violation, |w| w <= 1e-12),
    ]
}

fn p2_checks(seed: u64, n: usize, mutation: Mutation) -> [CheckRow; 3] {
    let omega_fn = match mutation {
        Mutation::None => omega,
        Mutation::FlipOmega => flipped_omega,
    };
    let mut rng = seeded_rng(seed);
    let (mut gap, mut lambda, mut kkt) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for i in 0..n {
        let inst = random_p2_instance(&mut rng, 1 + i % 3);
        let oracle = solve_weighted(&min_norm(inst.input_dim() + 1), &inst.constraints()).map(|r| r.minimizer);
        match (solve_p2_with_omega(&inst, omega_fn), oracle) {
            (Ok(r), Ok(o)) => {
                gap = gap.max((&r.minimizer - o).amax());
                lambda = lambda.max(r.multipliers.max());
                kkt = kkt.max(r.kkt_residual);
            }
            (Err(Error::Inconsistent { closed_form, residual, .. }), Ok(o)) => {
                gap = gap.max((DVector::from_vec(closed_form) - o).amax());
                kkt = kkt.max(residual);
            }
            _ => gap = f64::INFINITY,
        }
    }
    [
        check("p2_oracle_gap", gap, |w| w <= 1e-8),
        check("p2_multiplier_sign", lambda, |w| w <= 1e-12),
        check("p2_kkt_residual", kkt, |w| w <= 1e-8),
    ]
}

fn weighted_acc_gap(params: &AccParams, seed: u64, n: usize) -> f64 {
    let mut rng = seeded_rng(seed);
    let domain = acc_box();
    let mut gap = 0.0f64;
    for _ in 0..n {
        let qp = acc_qp_matrices(params, AccState::from_vector(&domain.sample(&mut rng)));
        let solved = qp.objective().and_then(|obj| {
            let c = qp.constraints();
            Ok((solve_weighted_closed_form(&obj, &c)?, solve_weighted(&obj, &c)?))
        });
        match solved {
            Ok((closed, oracle)) => {
                let scale = 1.0 + oracle.minimizer.amax();
                gap = gap.max((&closed.minimizer - &oracle.minimizer).amax() / scale);
            }
            Err(_) => return f64::INFINITY,
        }
    }
    gap
}

/// Relative disagreement between the barrier row `b − A z` and the barrier
/// inequality `L_f h + L_g h u + α(h)` evaluated from the certificates.
fn barrier_row_gap(params: &AccParams, seed: u64, n: usize) -> f64 {
    let (system, barrier) = match acc_barrier(params) {
        Ok(b) => (acc_system(params), b),
        Err(_) => return f64::INFINITY,
    };
    let mut rng = seeded_rng(seed);
    let domain = acc_box();
    let mut gap = 0.0f64;
    for _ in 0..n {
        let x = domain.sample(&mut rng);
        let t = 60.0 * rng.random::<f64>();
        let u = 4e4 * rng.random::<f64>() - 2e4;
        let qp = acc_qp_matrices(params, AccState::from_vector(&x));
        let row = qp.b_zcbf - qp.a_zcbf[0] * u;
        match zcbf_residual_at(&barrier, &system, t, &x, &DVector::from_element(1, u)) {
            Ok(r) => gap = gap.max((row - r).abs() / (1.0 + row.abs().max(r.abs()))),
            Err(_) => return f64::INFINITY,
        }
    }
    gap
}

/// Largest `δ*² − ûᵀû/k²` over instances built around a feasible `(û, 0)`.
fn relaxation_excess(seed: u64, n: usize) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        let m = 1 + i % 3;
        let mut draw = |s: f64| DVector::from_fn(m, |_, _| s * (2.0 * rng.random::<f64>() - 1.0));
        let (u_hat, lg_v, mut lg_h) = (draw(3.0), draw(3.0), draw(3.0));
        if lg_h.norm() < 0.1 {
            lg_h[0] += 1.0;
        }
        let cv = 5.0 * rng.random::<f64>();
        let alpha_h = 10.0 * rng.random::<f64>() - 5.0;
        let inst = P2Instance {
            lf_v: -lg_v.dot(&u_hat) - cv - 2.0 * rng.random::<f64>(),
            lf_h: -lg_h.dot(&u_hat) - alpha_h + 2.0 * rng.random::<f64>(),
            lg_v,
            cv,
            lg_h,
            alpha_h,
        };
        for k in [1.0, 10.0, 100.0] {
            match solve_p2_relaxed(&inst, k) {
                Ok(r) => {
                    let d = r.minimizer[m];
                    worst = worst.max(d * d - u_hat.norm_squared() / (k * k));
                }
                Err(_) => return f64::INFINITY,
            }
        }
    }
    worst
}

/// `|log₂(q₁₀ₙ / qₙ)|` for the sampled quotient of the closed-form controller.
fn lipschitz_log_ratio(params: &AccParams, seed: u64, pairs: usize) -> f64 {
    let (Ok(barrier), Ok(clf)) = (acc_barrier(params), acc_clf(params)) else {
        return f64::INFINITY;
    };
    let system = acc_system(params);
    let controller = |x: &DVector<f64>| {
        let inst = P2Instance::from_certificates(&barrier, &clf, &system, 0.0, x)?;
        solve_p2_with_omega(&inst, omega).map(|r: QpResult| r.minimizer.rows(0, 1).into_owned())
    };
    let small = estimate_lipschitz(controller, &acc_box(), pairs, seed);
    let large = estimate_lipschitz(controller, &acc_box(), pairs * 10, seed);
    if small.failures + large.failures > 0 || !(small.max_quotient > 0.0) {
        return f64::INFINITY;
    }
    (large.max_quotient / small.max_quotient).log2().abs()
}

/// `|log₂(e(dt) / e(dt/2)) − 4|` on `ẋ = −x`.
fn rk4_order_gap() -> f64 {
    let Ok(system) = zcbf::barrier::ControlAffineSystem::new(1, 1, |x| -x.clone(), |_| DMatrix::zeros(1, 1)) else {
        return f64::INFINITY;
    };
    let error = |dt: f64| {
        simulate(
            &system,
            |_, _| Ok(ControlOutput::open_loop(DVector::zeros(1))),
            &Perturbation::None,
            &Probes::default(),
            DVector::from_element(1, 1.0),
            1.0,
            dt,
        )
        .ok()
        .and_then(|t| t.final_state().map(|x| (x[0] - (-1.0f64).exp()).abs()))
    };
    match (error(0.1), error(0.05)) {
        (Some(a), Some(b)) => ((a / b).log2() - 4.0).abs(),
        _ => f64::INFINITY,
    }
}

/// Largest derivative of `V_C` along the closed loop at states outside the
/// ISS level set, with the disturbance at its worst.
fn vc_max_derivative(params: &AccParams, seed: u64, samples: usize) -> f64 {
    let (Ok(barrier), Ok(gamma)) = (acc_barrier(params), params.gamma_max()) else {
        return f64::INFINITY;
    };
    let Ok(level) = ExtendedClassK::linear(params.tau_des * params.grav / params.kappa)
        .and_then(|k| IssLevel::new(k, params.theta_amp))
    else {
        return f64::INFINITY;
    };
    let mut rng = seeded_rng(seed);
    let domain = acc_box();
    let mut states = Vec::with_capacity(samples);
    // A level set covering the whole box leaves nothing to check.
    for _ in 0..samples.saturating_mul(1000) {
        if states.len() == samples {
            break;
        }
        let x = domain.sample(&mut rng);
        if barrier.value(&x) < -gamma - 0.01 {
            states.push(x);
        }
    }
    let report = check_vc_decrease(
        &acc_system(params),
        acc_controller(params),
        &acc_perturbation(params),
        &barrier,
        &level,
        &states,
        0.0,
    );
    if report.evaluated != samples || !report.failures.is_empty() {
        return f64::INFINITY;
    }
    report.max_derivative
}
