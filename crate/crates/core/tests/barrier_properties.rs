use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use zcbf::barrier::{
    finite_difference_gradient, lie_derivatives, vc_value, zcbf_residual_at, ControlAffineSystem, ExtendedClassK,
    SafeSetFamily, ScalarField, ZeroingBarrier,
};
use zcbf::qp::{solve_p1, P1Instance};

/// `h(x) = c + bᵀx + xᵀQx + d x₀³` with symmetric `Q`.
#[derive(Debug, Clone)]
struct Poly {
    c: f64,
    b: DVector<f64>,
    q: DMatrix<f64>,
    d: f64,
}

impl Poly {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c + self.b.dot(x) + x.dot(&(&self.q * x)) + self.d * x[0].powi(3)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.b + &self.q * x * 2.0;
        g[0] += 3.0 * self.d * x[0] * x[0];
        g
    }

    fn barrier(&self, alpha: ExtendedClassK) -> ZeroingBarrier {
        let (p, q) = (self.clone(), self.clone());
        ZeroingBarrier::new(move |x| p.value(x), move |x| q.gradient(x), alpha)
    }
}

fn poly_strategy(n: usize) -> impl Strategy<Value = Poly> {
    (
        -2.0..2.0f64,
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec(-1.0..1.0f64, n * n),
        -0.5..0.5f64,
    )
        .prop_map(move |(c, b, q, d)| {
            let q = DMatrix::from_vec(n, n, q);
            Poly {
                c,
                b: DVector::from_vec(b),
                q: (&q + q.transpose()) * 0.5,
                d,
            }
        })
}

/// Linear drift `Ax` plus a quadratic term, constant input matrix.
fn system_strategy(n: usize, m: usize) -> impl Strategy<Value = ControlAffineSystem> {
    (
        prop::collection::vec(-1.0..1.0f64, n * n),
        prop::collection::vec(-1.0..1.0f64, n * m),
        -0.5..0.5f64,
    )
        .prop_map(move |(a, g, k)| {
            let a = DMatrix::from_vec(n, n, a);
            let g = DMatrix::from_vec(n, m, g);
            ControlAffineSystem::new(
                n,
                m,
                move |x| {
                    let mut f = &a * x;
                    f[0] += k * x.norm_squared();
                    f
                },
                move |_| g.clone(),
            )
            .unwrap()
        })
}

fn state(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

fn case() -> impl Strategy<Value = (Poly, ControlAffineSystem, DVector<f64>)> {
    (1usize..=4, 1usize..=2).prop_flat_map(|(n, m)| (poly_strategy(n), system_strategy(n, m), state(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// `L_f h` is the directional derivative of `h` along `f`, and each entry
    /// of `L_g h` the directional derivative along a column of `g`.
    #[test]
    fn lie_derivatives_match_directional_differences((poly, system, x) in case()) {
        let b = poly.barrier(ExtendedClassK::linear(1.0).unwrap());
        let lie = lie_derivatives(&b, &system, &x).unwrap();
        let directional = |v: DVector<f64>| {
            let s = 1e-6;
            (poly.value(&(&x + &v * s)) - poly.value(&(&x - &v * s))) / (2.0 * s)
        };
        let f = system.drift(0.0, &x).unwrap();
        let scale = 1.0 + poly.gradient(&x).norm() * (1.0 + f.norm());
        prop_assert!((lie.lf - directional(f)).abs() <= 1e-5 * scale);
        let g = system.control_matrix(0.0, &x).unwrap();
        for j in 0..g.ncols() {
            let col = g.column(j).into_owned();
            prop_assert!((lie.lg[j] - directional(col)).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences((poly, _system, x) in case()) {
        let numeric = finite_difference_gradient(|y| poly.value(y), &x);
        let analytic = poly.gradient(&x);
        prop_assert!((&numeric - &analytic).amax() <= 1e-5 * (1.0 + analytic.amax()));
    }

    #[test]
    fn vc_is_the_positive_part_of_minus_h((poly, _system, x) in case()) {
        let b = poly.barrier(ExtendedClassK::linear(1.0).unwrap());
        let h = b.value(&x);
        prop_assert_eq!(vc_value(&b, &x), (-h).max(0.0));
        prop_assert!(vc_value(&b, &x) >= 0.0);
    }

    #[test]
    fn safe_sets_are_nested((poly, _system, x) in case(), e1 in 0.0..2.0f64, e2 in 0.0..2.0f64) {
        let family = SafeSetFamily::new(poly.barrier(ExtendedClassK::linear(1.0).unwrap()), 0.0).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        if family.contains_with(&x, lo) {
            prop_assert!(family.contains_with(&x, hi));
        }
        prop_assert_eq!(family.contains(&x), poly.value(&x) >= 0.0);
    }

    /// The barrier-only minimizer computed from the Lie derivatives makes the
    /// closed-loop barrier inequality hold at the same state.
    #[test]
    fn p1_input_is_admissible((poly, system, x) in case(), gain in 0.1..10.0f64) {
        let b = poly.barrier(ExtendedClassK::linear(gain).unwrap());
        let inst = P1Instance::from_certificates(&b, &system, 0.0, &x).unwrap();
        prop_assume!(inst.lg_h.norm() >= 1e-3);
        let u = solve_p1(&inst).unwrap().minimizer;
        let residual = zcbf_residual_at(&b, &system, 0.0, &x, &u).unwrap();
        let scale = 1.0 + inst.lf_h.abs() + inst.alpha_h.abs();
        prop_assert!(residual >= -1e-12 * scale);
    }

    #[test]
    fn class_k_functions_are_strictly_increasing(gain in 0.01..100.0f64, cubic in any::<bool>()) {
        let k = if cubic { ExtendedClassK::cubic(gain) } else { ExtendedClassK::linear(gain) }.unwrap();
        prop_assert_eq!(k.eval(0.0), 0.0);
        prop_assert!(k.check_on_grid(-10.0, 10.0, 1000).is_ok());
        prop_assert!(k.check_on_grid(-1e-3, 1e-3, 1001).is_ok());
    }
}

#[test]
fn non_monotone_custom_function_is_refused() {
    assert!(ExtendedClassK::custom(|r| r * r, 1.0).is_err());
    assert!(ExtendedClassK::custom(|r| r + 1.0, 1.0).is_err());
    assert!(ExtendedClassK::custom(f64::tanh, 3.0).is_ok());
}
