use nalgebra::{DMatrix, DVector};

use super::{kkt_verify, Branch, Halfspace, QpResult, WeightedObjective};
use crate::{Error, Result};

const ACCEPT_TOL: f64 = 1e-9;

/// Exact minimizer of `½ zᵀHz + Fᵀz` over at most two halfspaces.
///
/// Every subset of constraints is treated as active in turn; the equality
/// constrained KKT system is solved directly and the first candidate that is
/// primal feasible with nonnegative multipliers is kept. Strict convexity
/// makes that candidate the unique minimizer.
pub fn solve_weighted(objective: &WeightedObjective, constraints: &[Halfspace]) -> Result<QpResult> {
    let n = objective.dim();
    if constraints.len() > 2 {
        return Err(Error::InvalidConstraints(format!(
            "at most two constraints are supported, got {}",
            constraints.len()
        )));
    }
    for c in constraints {
        if c.normal.len() != n {
            return Err(Error::DimensionMismatch {
                what: "constraint normal",
                expected: n,
                got: c.normal.len(),
            });
        }
        if !(c.normal.norm() > 0.0) || !c.bound.is_finite() {
            return Err(Error::InvalidConstraints(
                "constraint normals must be nonzero and bounds finite".into(),
            ));
        }
    }

    let subsets: &[&[usize]] = match constraints.len() {
        0 => &[&[]],
        1 => &[&[], &[0]],
        _ => &[&[], &[0], &[1], &[0, 1]],
    };

    let mut best: Option<QpResult> = None;
    for active in subsets {
        let Some((z, mu_active)) = solve_equality_kkt(objective, constraints, active) else {
            continue;
        };
        let mut mu = DVector::zeros(constraints.len());
        for (k, &i) in active.iter().enumerate() {
            mu[i] = mu_active[k];
        }
        if !accept(constraints, &z, &mu) {
            continue;
        }
        mu.iter_mut().for_each(|m| *m = m.max(0.0));
        let kkt_residual = kkt_verify(objective.h(), objective.f(), constraints, &z, &mu);
        // Near a change of active set several candidates pass the tolerant
        // acceptance test; they agree to within it, keep the most exact.
        if best.as_ref().is_some_and(|b| b.kkt_residual <= kkt_residual) {
            continue;
        }
        let multipliers = &mu * -0.5;
        let branch = Branch::from_multipliers(multipliers.as_slice());
        best = Some(QpResult {
            minimizer: z,
            multipliers,
            branch,
            kkt_residual,
        });
    }
    if let Some(best) = best {
        return Ok(best);
    }

    Err(Error::Infeasible(
        "no active set yields a feasible KKT point (constraints have empty intersection)".into(),
    ))
}

/// Solves `[H Aᵀ; A 0] [z; μ] = [−F; b]` for the active rows `A`.
fn solve_equality_kkt(
    objective: &WeightedObjective,
    constraints: &[Halfspace],
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = objective.dim();
    let k = active.len();
    if k == 2 {
        let a0 = constraints[active[0]].normal.normalize();
        let a1 = constraints[active[1]].normal.normalize();
        if 1.0 - a0.dot(&a1).abs() < 1e-12 {
            return None;
        }
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(objective.h());
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-objective.f()));
    for (row, &i) in active.iter().enumerate() {
        let a = &constraints[i].normal;
        for j in 0..n {
            kkt[(n + row, j)] = a[j];
            kkt[(j, n + row)] = a[j];
        }
        rhs[n + row] = constraints[i].bound;
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn accept(constraints: &[Halfspace], z: &DVector<f64>, mu: &DVector<f64>) -> bool {
    let mu_scale = 1.0 + mu.amax();
    constraints.iter().zip(mu.iter()).all(|(c, m)| {
        let scale = 1.0 + c.bound.abs() + c.normal.amax() * z.amax();
        c.slack_violation(z) <= ACCEPT_TOL * scale && *m >= -ACCEPT_TOL * mu_scale
    })
}
