//! Closed-form minimizers for the barrier-only and barrier + Lyapunov
//! programs.
//!
//! Both programs reduce to `min |z|²` subject to at most two halfspaces
//! `⟨yᵢ, z⟩ ≤ pᵢ`. The minimizer is `z* = Σ λᵢ yᵢ` where `λ ≤ 0` solves a
//! complementarity problem in the Gram matrix `Gᵢⱼ = ⟨yᵢ, yⱼ⟩`; for two
//! constraints it is resolved by three explicit branches.

use nalgebra::{DMatrix, DVector};

use super::{kkt_verify, solve_weighted, Branch, Halfspace, QpResult, WeightedObjective, KKT_TOLERANCE};
use crate::barrier::{lie_derivatives_at, ControlAffineSystem, ControlLyapunovSpec, ScalarField, ZeroingBarrier};
use crate::{Error, Result};

/// Below this `|L_g h|` the programs are refused rather than regularized.
pub const RELATIVE_DEGREE_THRESHOLD: f64 = 1e-10;

/// `ω(r) = min(r, 0)`.
pub fn omega(r: f64) -> f64 {
    if r > 0.0 {
        0.0
    } else {
        r
    }
}

/// Barrier-only program: `min uᵀu` s.t. `L_g h u + L_f h + α(h) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct P1Instance {
    pub lf_h: f64,
    pub lg_h: DVector<f64>,
    pub alpha_h: f64,
}

impl P1Instance {
    pub fn new(lf_h: f64, lg_h: DVector<f64>, alpha_h: f64) -> Self {
        Self { lf_h, lg_h, alpha_h }
    }

    pub fn from_certificates(
        barrier: &ZeroingBarrier,
        system: &ControlAffineSystem,
        t: f64,
        x: &DVector<f64>,
    ) -> Result<Self> {
        let lie = lie_derivatives_at(barrier, system, t, x)?;
        Ok(Self::new(lie.lf, lie.lg, barrier.alpha_of_h(x)))
    }

    /// The barrier constraint as `−L_g h · u ≤ L_f h + α(h)`.
    pub fn constraint(&self) -> Halfspace {
        Halfspace::new(-&self.lg_h, self.lf_h + self.alpha_h)
    }
}

/// Barrier + Lyapunov program over `(u, δ)`:
/// `min uᵀu + δ²` s.t. `L_g V u + L_f V + cV − δ ≤ 0` and
/// `L_g h u + L_f h + α(h) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct P2Instance {
    pub lf_v: f64,
    pub lg_v: DVector<f64>,
    /// `c · V(x)`.
    pub cv: f64,
    pub lf_h: f64,
    pub lg_h: DVector<f64>,
    pub alpha_h: f64,
}

impl P2Instance {
    pub fn from_certificates(
        barrier: &ZeroingBarrier,
        clf: &ControlLyapunovSpec,
        system: &ControlAffineSystem,
        t: f64,
        x: &DVector<f64>,
    ) -> Result<Self> {
        let h = lie_derivatives_at(barrier, system, t, x)?;
        let v = lie_derivatives_at(clf, system, t, x)?;
        Ok(Self {
            lf_v: v.lf,
            lg_v: v.lg,
            cv: clf.rate() * clf.value(x),
            lf_h: h.lf,
            lg_h: h.lg,
            alpha_h: barrier.alpha_of_h(x),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lg_h.len()
    }

    /// `[(y₁, p₁), (y₂, p₂)]` with `y₁ = (L_g V, −1)`, `p₁ = −L_f V − cV`,
    /// `y₂ = (−L_g h, 0)`, `p₂ = L_f h + α(h)`.
    pub fn constraints(&self) -> [Halfspace; 2] {
        self.constraints_with_weight(1.0)
    }

    /// Constraints after the substitution `δ' = k δ`.
    fn constraints_with_weight(&self, k: f64) -> [Halfspace; 2] {
        let m = self.input_dim();
        let mut y1 = DVector::zeros(m + 1);
        y1.rows_mut(0, m).copy_from(&self.lg_v);
        y1[m] = -1.0 / k;
        let mut y2 = DVector::zeros(m + 1);
        y2.rows_mut(0, m).copy_from(&(-&self.lg_h));
        [
            Halfspace::new(y1, -self.lf_v - self.cv),
            Halfspace::new(y2, self.lf_h + self.alpha_h),
        ]
    }
}

fn check_relative_degree(lg_h: &DVector<f64>) -> Result<()> {
    let norm = lg_h.norm();
    if lg_h.is_empty() || !(norm >= RELATIVE_DEGREE_THRESHOLD) {
        return Err(Error::RelativeDegree { norm, state: None });
    }
    Ok(())
}

fn kkt_tolerance(constraints: &[Halfspace], z: &DVector<f64>) -> f64 {
    let p = constraints.iter().fold(0.0f64, |a, c| a.max(c.bound.abs()));
    KKT_TOLERANCE * (1.0 + p + z.amax())
}

/// Relative tolerance for the weighted program: each KKT term is compared with
/// the size of the quantities that produce it, so badly scaled objectives
/// (tiny `H`, large multipliers) are not rejected for rounding.
fn weighted_kkt_tolerance(objective: &WeightedObjective, constraints: &[Halfspace], z: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let zmax = z.amax();
    let mut scale = 1.0 + objective.h().amax() * zmax + objective.f().amax();
    for (c, m) in constraints.iter().zip(mu.iter()) {
        let row = c.normal.amax() * zmax + c.bound.abs();
        scale = scale.max(m.abs() * (c.normal.amax() + row)).max(row);
    }
    KKT_TOLERANCE * scale
}

/// Minimizes `|z|²` over at most two halfspaces with the Gram-matrix closed
/// form. Returns the minimizer and the nonpositive multipliers `λ`.
///
/// `omega` is a parameter only so mutation tests can swap it out; callers
/// should pass [`omega`].
pub fn min_norm_halfspaces(
    dim: usize,
    constraints: &[Halfspace],
    omega: fn(f64) -> f64,
) -> Result<(DVector<f64>, Vec<f64>)> {
    if constraints.iter().any(|c| c.normal.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "constraint normal",
            expected: dim,
            got: constraints.iter().map(|c| c.normal.len()).find(|&l| l != dim).unwrap_or(0),
        });
    }
    match constraints {
        [] => Ok((DVector::zeros(dim), vec![])),
        [c] => {
            let g = c.normal.norm_squared();
            if !(g > 0.0) {
                return Err(Error::InvalidConstraints("zero constraint normal".into()));
            }
            let lambda = omega(c.bound) / g;
            Ok((&c.normal * lambda, vec![lambda]))
        }
        [c1, c2] => {
            let (y1, p1) = (&c1.normal, c1.bound);
            let (y2, p2) = (&c2.normal, c2.bound);
            let g11 = y1.norm_squared();
            let g12 = y1.dot(y2);
            let g21 = g12;
            let g22 = y2.norm_squared();
            let det = g11 * g22 - g12 * g21;
            if !(det > 1e-14 * g11 * g22) {
                return Err(Error::InvalidConstraints(
                    "constraint normals are linearly dependent".into(),
                ));
            }
            let (l1, l2) = if g21 * omega(p2) - g22 * p1 <= 0.0 {
                (0.0, omega(p2) / g22)
            } else if g12 * omega(p1) - g11 * p2 <= 0.0 {
                (omega(p1) / g11, 0.0)
            } else {
                (
                    omega(g22 * p1 - g21 * p2) / det,
                    omega(g11 * p2 - g12 * p1) / det,
                )
            };
            Ok((y1 * l1 + y2 * l2, vec![l1, l2]))
        }
        _ => Err(Error::InvalidConstraints(format!(
            "at most two constraints are supported, got {}",
            constraints.len()
        ))),
    }
}

/// Closed-form minimizer of the barrier-only program:
/// `u* = 0` when `L_f h + α(h) > 0`, else
/// `u* = −(L_f h + α(h)) L_g hᵀ / (L_g h L_g hᵀ)`.
pub fn solve_p1(inst: &P1Instance) -> Result<QpResult> {
    check_relative_degree(&inst.lg_h)?;
    let slack = inst.lf_h + inst.alpha_h;
    let lambda = omega(slack) / inst.lg_h.norm_squared();
    let u = &inst.lg_h * -lambda;
    let constraint = [inst.constraint()];
    let m = inst.lg_h.len();
    let mu = DVector::from_element(1, -2.0 * lambda);
    let kkt_residual = kkt_verify(
        &(DMatrix::identity(m, m) * 2.0),
        &DVector::zeros(m),
        &constraint,
        &u,
        &mu,
    );
    Ok(QpResult {
        minimizer: u,
        multipliers: DVector::from_element(1, lambda),
        branch: Branch::from_multipliers(&[lambda]),
        kkt_residual,
    })
}

/// Closed-form minimizer `(u*, δ*)` of the barrier + Lyapunov program,
/// replayed through the KKT conditions before it is returned.
pub fn solve_p2(inst: &P2Instance) -> Result<QpResult> {
    solve_p2_with_omega(inst, omega)
}

#[doc(hidden)]
pub fn solve_p2_with_omega(inst: &P2Instance, omega: fn(f64) -> f64) -> Result<QpResult> {
    solve_p2_inner(inst, 1.0, omega)
}

/// Same program with objective `uᵀu + k²δ²`, solved through `δ' = kδ`.
pub fn solve_p2_relaxed(inst: &P2Instance, k: f64) -> Result<QpResult> {
    if !(k.is_finite() && k != 0.0) {
        return Err(Error::InvalidParameter {
            name: "relaxation weight",
            reason: format!("must be finite and nonzero, got {k}"),
        });
    }
    solve_p2_inner(inst, k.abs(), omega)
}

fn solve_p2_inner(inst: &P2Instance, k: f64, omega: fn(f64) -> f64) -> Result<QpResult> {
    check_relative_degree(&inst.lg_h)?;
    let m = inst.input_dim();
    if inst.lg_v.len() != m {
        return Err(Error::DimensionMismatch {
            what: "L_g V",
            expected: m,
            got: inst.lg_v.len(),
        });
    }
    let scaled = inst.constraints_with_weight(k);
    let (mut z, lambda) = min_norm_halfspaces(m + 1, &scaled, omega)?;
    z[m] /= k;

    let original = inst.constraints();
    let mut h = DMatrix::identity(m + 1, m + 1) * 2.0;
    h[(m, m)] = 2.0 * k * k;
    let f = DVector::zeros(m + 1);
    let mu = DVector::from_iterator(2, lambda.iter().map(|l| -2.0 * l));
    let kkt_residual = kkt_verify(&h, &f, &original, &z, &mu);
    if !(kkt_residual <= kkt_tolerance(&original, &z)) {
        let oracle = WeightedObjective::new(h, f)
            .and_then(|obj| solve_weighted(&obj, &original))
            .ok()
            .map(|r| r.minimizer.as_slice().to_vec());
        return Err(Error::Inconsistent {
            closed_form: z.as_slice().to_vec(),
            oracle,
            residual: kkt_residual,
        });
    }
    Ok(QpResult {
        minimizer: z,
        branch: Branch::from_multipliers(&lambda),
        multipliers: DVector::from_vec(lambda),
        kkt_residual,
    })
}

/// Weighted objective `½ zᵀHz + Fᵀz` reduced to the min-norm closed form by
/// completing the square and changing variables with the Cholesky factor of
/// `H`.
pub fn solve_weighted_closed_form(objective: &WeightedObjective, constraints: &[Halfspace]) -> Result<QpResult> {
    let n = objective.dim();
    let chol = objective
        .h()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidObjective("H is not positive definite".into()))?;
    let l = chol.l();
    let z0 = -chol.solve(objective.f());
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut transformed = Vec::with_capacity(constraints.len());
    for c in constraints {
        if c.normal.len() != n {
            return Err(Error::DimensionMismatch {
                what: "constraint normal",
                expected: n,
                got: c.normal.len(),
            });
        }
        let y = l
            .solve_lower_triangular(&c.normal)
            .ok_or_else(|| Error::InvalidObjective("singular Cholesky factor".into()))?
            * sqrt2;
        transformed.push(Halfspace::new(y, c.bound - c.normal.dot(&z0)));
    }
    let (w, lambda) = min_norm_halfspaces(n, &transformed, omega)?;
    let back = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or_else(|| Error::InvalidObjective("singular Cholesky factor".into()))?;
    let z = z0 + back * sqrt2;

    let mu = DVector::from_iterator(lambda.len(), lambda.iter().map(|l| -2.0 * l));
    let kkt_residual = kkt_verify(objective.h(), objective.f(), constraints, &z, &mu);
    if !(kkt_residual <= weighted_kkt_tolerance(objective, constraints, &z, &mu)) {
        return Err(Error::Inconsistent {
            closed_form: z.as_slice().to_vec(),
            oracle: solve_weighted(objective, constraints)
                .ok()
                .map(|r| r.minimizer.as_slice().to_vec()),
            residual: kkt_residual,
        });
    }
    Ok(QpResult {
        minimizer: z,
        branch: Branch::from_multipliers(&lambda),
        multipliers: DVector::from_vec(lambda),
        kkt_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn p1_slack_constraint_gives_zero() {
        let r = solve_p1(&P1Instance::new(0.25, dvector![1.0, -2.0], 0.25)).unwrap();
        assert_eq!(r.minimizer, dvector![0.0, 0.0]);
        assert_eq!(r.branch, Branch::Inactive);
    }

    #[test]
    fn p1_active_scalar() {
        // Lf_h = -2, Lg_h = 1, α(h) = 0.5 → u = 1.5
        let r = solve_p1(&P1Instance::new(-2.0, dvector![1.0], 0.5)).unwrap();
        assert_eq!(r.minimizer, dvector![1.5]);
        assert_eq!(r.branch, Branch::CbfActive);
        assert!(r.multipliers[0] < 0.0);
        assert!(r.kkt_residual < 1e-15);
    }

    #[test]
    fn p1_on_branch_seam() {
        let r = solve_p1(&P1Instance::new(-0.5, dvector![3.0, 1.0], 0.5)).unwrap();
        assert_eq!(r.minimizer, dvector![0.0, 0.0]);
    }

    #[test]
    fn p1_refuses_vanishing_lg_h() {
        let err = solve_p1(&P1Instance::new(-1.0, dvector![0.0, 1e-12], 0.0)).unwrap_err();
        assert!(matches!(err, Error::RelativeDegree { .. }));
        assert!(solve_p1(&P1Instance::new(-1.0, dvector![], 0.0)).is_err());
    }

    #[test]
    fn p2_gram_entries() {
        let inst = P2Instance {
            lf_v: 0.0,
            lg_v: dvector![1.0],
            cv: 0.0,
            lf_h: 0.0,
            lg_h: dvector![-2.0],
            alpha_h: 0.0,
        };
        let [c1, c2] = inst.constraints();
        assert_eq!(c1.normal, dvector![1.0, -1.0]);
        assert_eq!(c2.normal, dvector![2.0, 0.0]);
        let g = dmatrix![
            c1.normal.dot(&c1.normal), c1.normal.dot(&c2.normal);
            c2.normal.dot(&c1.normal), c2.normal.dot(&c2.normal)
        ];
        assert_eq!(g, dmatrix![2.0, 2.0; 2.0, 4.0]);
    }

    #[test]
    fn p2_both_slack_is_zero() {
        let inst = P2Instance {
            lf_v: -3.0,
            lg_v: dvector![1.0, 1.0],
            cv: 1.0,
            lf_h: 1.0,
            lg_h: dvector![0.5, 2.0],
            alpha_h: 0.5,
        };
        let r = solve_p2(&inst).unwrap();
        assert_eq!(r.minimizer, DVector::zeros(3));
        assert_eq!(r.branch, Branch::Inactive);
    }

    #[test]
    fn p2_mismatched_lg_v() {
        let inst = P2Instance {
            lf_v: 0.0,
            lg_v: dvector![1.0],
            cv: 0.0,
            lf_h: 0.0,
            lg_h: dvector![1.0, 1.0],
            alpha_h: 0.0,
        };
        assert!(matches!(solve_p2(&inst), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn flipped_omega_is_caught_by_kkt_replay() {
        // Barrier active: zero input violates it.
        let inst = P2Instance {
            lf_v: 1.0,
            lg_v: dvector![1.0],
            cv: 1.0,
            lf_h: -2.0,
            lg_h: dvector![1.0],
            alpha_h: 0.0,
        };
        assert!(solve_p2(&inst).is_ok());
        let err = solve_p2_with_omega(&inst, |r| r.max(0.0)).unwrap_err();
        match err {
            Error::Inconsistent { oracle, .. } => assert!(oracle.is_some()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relaxation_weight_rejects_zero() {
        let inst = P2Instance {
            lf_v: 0.0,
            lg_v: dvector![1.0],
            cv: 0.0,
            lf_h: 0.0,
            lg_h: dvector![1.0],
            alpha_h: 0.0,
        };
        assert!(solve_p2_relaxed(&inst, 0.0).is_err());
        assert!(solve_p2_relaxed(&inst, f64::NAN).is_err());
    }

    #[test]
    fn weighted_closed_form_matches_projection() {
        let c = [Halfspace::new(dvector![-1.0, 0.0], -1.0)];
        let r = solve_weighted_closed_form(&WeightedObjective::min_norm(2), &c).unwrap();
        assert!((&r.minimizer - dvector![1.0, 0.0]).amax() < 1e-14);
    }
}
