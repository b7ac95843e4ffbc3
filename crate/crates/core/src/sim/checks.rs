use nalgebra::DVector;
use rand::Rng;

use super::{ControlOutput, Perturbation, Trajectory};
use crate::barrier::{ControlAffineSystem, DomainBox, ExtendedClassK, ScalarField, ZeroingBarrier};
use crate::qp::corpus::seeded_rng;
use crate::{Error, Result};

/// Headway used by [`iss_epsilon`].
const DEFAULT_HEADWAY: f64 = 1.8;

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub holds: bool,
    pub min_h: f64,
    pub first_violation_time: Option<f64>,
}

/// `holds ⇔ minᵢ h(xᵢ) ≥ −epsilon − tol`.
pub fn check_forward_invariance(traj: &Trajectory, epsilon: f64, tol: f64) -> InvarianceReport {
    let floor = -epsilon - tol;
    let first_violation_time = traj
        .h_values
        .iter()
        .zip(&traj.times)
        .find(|(h, _)| **h < floor)
        .map(|(_, t)| *t);
    InvarianceReport {
        holds: first_violation_time.is_none(),
        min_h: traj.min_h(),
        first_violation_time,
    }
}

/// Inflated safe-set level `ε = γ(‖d‖∞)` for a class-K gain `γ`.
#[derive(Debug, Clone)]
pub struct IssLevel {
    gamma: ExtendedClassK,
    disturbance_bound: f64,
    epsilon: f64,
}

impl IssLevel {
    pub fn new(gamma: ExtendedClassK, disturbance_bound: f64) -> Result<Self> {
        if !(disturbance_bound.is_finite() && disturbance_bound >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "disturbance bound",
                reason: format!("must be finite and nonnegative, got {disturbance_bound}"),
            });
        }
        gamma.check_on_grid(0.0, (10.0 * disturbance_bound).max(1.0), 1001)?;
        let epsilon = gamma.eval(disturbance_bound);
        Ok(Self {
            gamma,
            disturbance_bound,
            epsilon,
        })
    }

    pub fn gamma(&self) -> &ExtendedClassK {
        &self.gamma
    }

    pub fn disturbance_bound(&self) -> f64 {
        self.disturbance_bound
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// `γ(z) = 1.8 g z / κ` evaluated at the disturbance bound.
pub fn iss_epsilon(kappa: f64, grav: f64, disturbance_bound: f64) -> Result<f64> {
    headway_iss_epsilon(DEFAULT_HEADWAY, kappa, grav, disturbance_bound)
}

/// `τ g ‖Δθ‖∞ / κ` for a headway barrier `h = D − τ v_f`.
pub fn headway_iss_epsilon(headway: f64, kappa: f64, grav: f64, disturbance_bound: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            reason: format!("must be positive, got {kappa}"),
        });
    }
    if !(disturbance_bound >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "disturbance bound",
            reason: format!("must be nonnegative, got {disturbance_bound}"),
        });
    }
    Ok(headway * grav * disturbance_bound / kappa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcViolation {
    pub index: usize,
    pub derivative: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VcDecreaseReport {
    pub evaluated: usize,
    /// Samples inside the level set, where `V_C` need not decrease.
    pub skipped: Vec<usize>,
    pub violations: Vec<VcViolation>,
    pub failures: Vec<(usize, Error)>,
    /// Largest derivative among evaluated samples.
    pub max_derivative: f64,
}

impl VcDecreaseReport {
    pub fn holds(&self) -> bool {
        self.evaluated > 0 && self.violations.is_empty() && self.failures.is_empty()
    }
}

/// Derivative of `V_C = −h` along the closed loop at each sample outside the
/// level set, with a non-vanishing disturbance pushed to its bound in the
/// direction that increases `V_C`.
pub fn check_vc_decrease<C>(
    system: &ControlAffineSystem,
    controller: C,
    perturbation: &Perturbation,
    barrier: &ZeroingBarrier,
    level: &IssLevel,
    samples: &[DVector<f64>],
    t: f64,
) -> VcDecreaseReport
where
    C: Fn(f64, &DVector<f64>) -> Result<ControlOutput>,
{
    let mut report = VcDecreaseReport {
        max_derivative: f64::NEG_INFINITY,
        ..Default::default()
    };
    for (i, x) in samples.iter().enumerate() {
        if barrier.value(x) >= -level.epsilon() {
            report.skipped.push(i);
            continue;
        }
        match vc_derivative(system, &controller, perturbation, barrier, t, x) {
            Ok(d) => {
                report.evaluated += 1;
                report.max_derivative = report.max_derivative.max(d);
                if !(d < 0.0) {
                    report.violations.push(VcViolation { index: i, derivative: d });
                }
            }
            Err(e) => report.failures.push((i, e)),
        }
    }
    report
}

fn vc_derivative<C>(
    system: &ControlAffineSystem,
    controller: &C,
    perturbation: &Perturbation,
    barrier: &ZeroingBarrier,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64>
where
    C: Fn(f64, &DVector<f64>) -> Result<ControlOutput>,
{
    let u = controller(t, x)?.input;
    let grad = barrier.gradient(x);
    let nominal = -grad.dot(&system.vector_field(t, x, &u)?);
    let disturbance = match perturbation {
        Perturbation::None => 0.0,
        Perturbation::Vanishing(g1) => -grad.dot(&g1(x)),
        Perturbation::NonVanishing { channel, bound, .. } => bound * grad.dot(channel).abs(),
    };
    Ok(nominal + disturbance)
}

/// Displacement scales, relative to the box widths, of the local pairs.
pub const LIPSCHITZ_SCALES: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone)]
pub struct LipschitzEstimate {
    pub max_quotient: f64,
    pub argmax: Option<(DVector<f64>, DVector<f64>)>,
    pub pairs_evaluated: usize,
    pub failures: usize,
    pub first_failure: Option<Error>,
}

/// Largest sampled `|u(x) − u(x′)| / |x − x′|` over `n_pairs` pairs in the box.
///
/// Even-numbered pairs are independent uniform draws; odd-numbered pairs are
/// local, `x′ = x + s·(w ⊙ d)` with `s` cycling through [`LIPSCHITZ_SCALES`],
/// `w` the box widths and `d` uniform in `[−1, 1]ⁿ`, clamped to the box.
pub fn estimate_lipschitz<C>(controller: C, domain: &DomainBox, n_pairs: usize, seed: u64) -> LipschitzEstimate
where
    C: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = seeded_rng(seed);
    let widths = domain.widths();
    let n = domain.dim();
    let mut est = LipschitzEstimate {
        max_quotient: 0.0,
        argmax: None,
        pairs_evaluated: 0,
        failures: 0,
        first_failure: None,
    };

    for k in 0..n_pairs {
        let x = domain.sample(&mut rng);
        let y = if k % 2 == 0 {
            domain.sample(&mut rng)
        } else {
            let s = LIPSCHITZ_SCALES[(k / 2) % LIPSCHITZ_SCALES.len()];
            let d = DVector::from_iterator(n, (0..n).map(|i| s * widths[i] * (2.0 * rng.random::<f64>() - 1.0)));
            domain.clamp(&(&x + d))
        };
        let dist = (&x - &y).norm();
        if !(dist > 0.0) {
            continue;
        }
        let (ux, uy) = match (controller(&x), controller(&y)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                est.failures += 1;
                est.first_failure.get_or_insert(e);
                continue;
            }
        };
        est.pairs_evaluated += 1;
        let q = (ux - uy).norm() / dist;
        if q > est.max_quotient || q.is_nan() {
            est.max_quotient = q;
            est.argmax = Some((x, y));
        }
    }
    est
}
