//! Pointwise min-norm quadratic programs.
//!
//! Every program here has at most two affine inequality constraints, written
//! uniformly as `a · z ≤ b` ([`Halfspace`]). Multipliers in [`QpResult`] use
//! the nonpositive convention in which the unweighted minimizer is
//! `z* = Σ λᵢ aᵢ`; the standard nonnegative KKT multipliers are `μ = −2λ`.

mod active_set;
mod closed_form;
pub mod corpus;
mod kkt;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub use active_set::solve_weighted;
pub use closed_form::{
    min_norm_halfspaces, omega, solve_p1, solve_p2, solve_p2_relaxed, solve_p2_with_omega,
    solve_weighted_closed_form, P1Instance, P2Instance, RELATIVE_DEGREE_THRESHOLD,
};
pub use kkt::kkt_verify;

/// Residual above which a closed-form answer is treated as wrong.
pub const KKT_TOLERANCE: f64 = 1e-8;

/// The constraint `normal · z ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub bound: f64,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, bound: f64) -> Self {
        Self { normal, bound }
    }

    /// `normal · z − bound`; positive means violated.
    pub fn slack_violation(&self, z: &DVector<f64>) -> f64 {
        self.normal.dot(z) - self.bound
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            normal: &self.normal * c,
            bound: self.bound * c,
        }
    }
}

/// `½ zᵀ H z + Fᵀ z` with `H` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedObjective {
    h: DMatrix<f64>,
    f: DVector<f64>,
}

impl WeightedObjective {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n {
            return Err(Error::InvalidObjective(format!(
                "H must be square and nonempty, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                what: "objective linear term",
                expected: n,
                got: f.len(),
            });
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::InvalidObjective(format!(
                "H is not symmetric (max |H - Hᵀ| = {asym:e})"
            )));
        }
        if h.iter().chain(f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidObjective("non-finite entry".into()));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::InvalidObjective("H is not positive definite".into()));
        }
        Ok(Self { h, f })
    }

    /// `uᵀu` written as `½ zᵀ (2I) z`.
    pub fn min_norm(n: usize) -> Self {
        Self {
            h: DMatrix::identity(n, n) * 2.0,
            f: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }
}

/// Which constraints carry a strictly negative multiplier. For two-constraint
/// programs the first constraint is the Lyapunov one and the second the
/// barrier one; a single constraint is reported as the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Inactive,
    CbfActive,
    ClfActive,
    BothActive,
}

impl Branch {
    pub(crate) fn from_multipliers(lambda: &[f64]) -> Self {
        match lambda {
            [] => Branch::Inactive,
            [l] => {
                if *l < 0.0 {
                    Branch::CbfActive
                } else {
                    Branch::Inactive
                }
            }
            [l1, l2, ..] => match (*l1 < 0.0, *l2 < 0.0) {
                (false, false) => Branch::Inactive,
                (false, true) => Branch::CbfActive,
                (true, false) => Branch::ClfActive,
                (true, true) => Branch::BothActive,
            },
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Inactive => "inactive",
            Branch::CbfActive => "cbf_active",
            Branch::ClfActive => "clf_active",
            Branch::BothActive => "both_active",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    /// `u` for barrier-only programs, `(u, δ)` when a relaxation is present.
    pub minimizer: DVector<f64>,
    /// Nonpositive multipliers, one per constraint.
    pub multipliers: DVector<f64>,
    pub branch: Branch,
    pub kkt_residual: f64,
}

impl QpResult {
    /// Standard nonnegative KKT multipliers `μ = −2λ`.
    pub fn kkt_multipliers(&self) -> DVector<f64> {
        &self.multipliers * -2.0
    }
}
