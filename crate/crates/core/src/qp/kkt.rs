use nalgebra::{DMatrix, DVector};

use super::Halfspace;

/// Worst violation of the KKT conditions of
/// `min ½ zᵀHz + Fᵀz  s.t.  aᵢ·z ≤ bᵢ` at `(z, μ)`, with `μ` in the standard
/// nonnegative convention.
///
/// Returns the max of: stationarity `|Hz + F + Σ μᵢ aᵢ|∞`, primal violation,
/// `|μᵢ (aᵢ·z − bᵢ)|`, and `max(0, −μᵢ)`. Dimension mismatches yield `+∞`.
pub fn kkt_verify(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    constraints: &[Halfspace],
    z: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let n = z.len();
    if h.nrows() != n
        || h.ncols() != n
        || f.len() != n
        || mu.len() != constraints.len()
        || constraints.iter().any(|c| c.normal.len() != n)
    {
        return f64::INFINITY;
    }

    let mut grad = h * z + f;
    for (c, m) in constraints.iter().zip(mu.iter()) {
        grad.axpy(*m, &c.normal, 1.0);
    }
    let mut worst = grad.amax();
    for (c, m) in constraints.iter().zip(mu.iter()) {
        let viol = c.slack_violation(z);
        worst = worst
            .max(viol.max(0.0))
            .max((m * viol).abs())
            .max((-m).max(0.0));
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}
