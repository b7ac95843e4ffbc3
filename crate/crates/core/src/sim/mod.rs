//! Fixed-step closed-loop simulation and the robustness checks run on its
//! output.
//!
//! Integration is classical RK4 with sample-and-hold control: the controller is
//! queried once at the start of every step and its input is held for the whole
//! step.

mod checks;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::barrier::{vc_from_h, ControlAffineSystem, ControlLyapunovSpec, ScalarField, ZeroingBarrier};
use crate::qp::QpResult;
use crate::{Error, Result};

pub use checks::{
    check_forward_invariance, check_vc_decrease, estimate_lipschitz, headway_iss_epsilon, iss_epsilon,
    InvarianceReport, IssLevel, LipschitzEstimate, VcDecreaseReport, VcViolation, LIPSCHITZ_SCALES,
};

pub const DEFAULT_DT: f64 = 1e-3;

pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type SignalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Additive disturbance on the state velocity.
#[derive(Clone)]
pub enum Perturbation {
    None,
    /// `g₁(x)`, expected to vanish on the safe set.
    Vanishing(StateFn),
    /// `g₂(t) = channel · signal(t)` with `|signal(t)| ≤ bound`.
    NonVanishing {
        channel: DVector<f64>,
        signal: SignalFn,
        bound: f64,
    },
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::None => write!(f, "None"),
            Perturbation::Vanishing(_) => write!(f, "Vanishing(..)"),
            Perturbation::NonVanishing { channel, bound, .. } => f
                .debug_struct("NonVanishing")
                .field("channel", channel)
                .field("bound", bound)
                .finish_non_exhaustive(),
        }
    }
}

impl Perturbation {
    pub fn vanishing<F>(g1: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Perturbation::Vanishing(Arc::new(g1))
    }

    pub fn non_vanishing<S>(channel: DVector<f64>, signal: S, bound: f64) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Perturbation::NonVanishing {
            channel,
            signal: Arc::new(signal),
            bound,
        }
    }

    /// Declared sup-norm bound of the signal; zero for the other kinds.
    pub fn bound(&self) -> f64 {
        match self {
            Perturbation::NonVanishing { bound, .. } => *bound,
            _ => 0.0,
        }
    }

    /// Disturbance at `(t, x)`; fails if a non-vanishing signal exceeds its
    /// declared bound.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        match self {
            Perturbation::None => Ok(None),
            Perturbation::Vanishing(g1) => Ok(Some(g1(x))),
            Perturbation::NonVanishing { channel, signal, bound } => {
                let s = signal(t);
                if !(s.abs() <= bound * (1.0 + 1e-12) + f64::MIN_POSITIVE) {
                    return Err(Error::DisturbanceBound {
                        time: t,
                        value: s.abs(),
                        bound: *bound,
                    });
                }
                Ok(Some(channel * s))
            }
        }
    }
}

/// What a controller returns at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub input: DVector<f64>,
    /// Lyapunov relaxation `δ`; zero for controllers without one.
    pub delta: f64,
    pub qp: Option<QpResult>,
}

impl ControlOutput {
    pub fn open_loop(input: DVector<f64>) -> Self {
        Self {
            input,
            delta: 0.0,
            qp: None,
        }
    }
}

/// Certificates evaluated along the trajectory. Missing ones record zeros.
#[derive(Debug, Clone, Default)]
pub struct Probes {
    pub barrier: Option<ZeroingBarrier>,
    pub clf: Option<ControlLyapunovSpec>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub deltas: Vec<f64>,
    pub h_values: Vec<f64>,
    pub v_values: Vec<f64>,
    pub vc_values: Vec<f64>,
    pub kkt_residuals: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            dt,
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            inputs: Vec::with_capacity(n),
            deltas: Vec::with_capacity(n),
            h_values: Vec::with_capacity(n),
            v_values: Vec::with_capacity(n),
            vc_values: Vec::with_capacity(n),
            kkt_residuals: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn min_h(&self) -> f64 {
        self.h_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest value taken by input component `k`.
    pub fn min_input(&self, k: usize) -> f64 {
        self.inputs.iter().map(|u| u[k]).fold(f64::INFINITY, f64::min)
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }
}

/// A simulation that stopped early, with everything recorded before the
/// failure.
#[derive(Debug, Clone)]
pub struct Aborted {
    pub partial: Trajectory,
    pub reason: Error,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "simulation aborted after {} samples: {}",
            self.partial.len(),
            self.reason
        )
    }
}

impl std::error::Error for Aborted {}

/// Integrates `ẋ = f(t, x) + g(t, x) u + d(t, x)` from `x0` on `[0, t_final]`
/// with RK4 at fixed `dt`, holding `u` over each step.
///
/// Samples are recorded at `tᵢ = i·dt` for `i = 0..=round(t_final/dt)`; the
/// input recorded at `tᵢ` is the one applied on `[tᵢ, tᵢ₊₁)`.
pub fn simulate<C>(
    system: &ControlAffineSystem,
    controller: C,
    perturbation: &Perturbation,
    probes: &Probes,
    x0: DVector<f64>,
    t_final: f64,
    dt: f64,
) -> std::result::Result<Trajectory, Box<Aborted>>
where
    C: Fn(f64, &DVector<f64>) -> Result<ControlOutput>,
{
    let abort = |partial: Trajectory, reason: Error| Box::new(Aborted { partial, reason });

    if !(dt.is_finite() && dt > 0.0) {
        return Err(abort(
            Trajectory::default(),
            Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            },
        ));
    }
    if !(t_final.is_finite() && t_final >= dt * (1.0 - 1e-9)) {
        return Err(abort(
            Trajectory::default(),
            Error::InvalidParameter {
                name: "t_final",
                reason: format!("must be at least dt = {dt}, got {t_final}"),
            },
        ));
    }
    if x0.len() != system.state_dim() {
        return Err(abort(
            Trajectory::default(),
            Error::DimensionMismatch {
                what: "initial state",
                expected: system.state_dim(),
                got: x0.len(),
            },
        ));
    }

    let steps = (t_final / dt).round() as usize;
    let mut traj = Trajectory::with_capacity(dt, steps + 1);
    let mut x = x0;

    for i in 0..=steps {
        let t = i as f64 * dt;
        let out = match controller(t, &x) {
            Ok(out) => out,
            Err(e) => return Err(abort(traj, e.at_state(x.as_slice()))),
        };
        if out.input.len() != system.input_dim() {
            let e = Error::DimensionMismatch {
                what: "controller output",
                expected: system.input_dim(),
                got: out.input.len(),
            };
            return Err(abort(traj, e));
        }
        record(&mut traj, probes, t, &x, &out);
        if i == steps {
            break;
        }
        match rk4_step(system, perturbation, t, &x, &out.input, dt) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => x = next,
            Ok(_) => return Err(abort(traj, Error::Divergence { step: i + 1, time: t + dt })),
            Err(e) => return Err(abort(traj, e)),
        }
    }
    Ok(traj)
}

fn record(traj: &mut Trajectory, probes: &Probes, t: f64, x: &DVector<f64>, out: &ControlOutput) {
    let h = probes.barrier.as_ref().map_or(0.0, |b| b.value(x));
    let v = probes.clf.as_ref().map_or(0.0, |c| c.value(x));
    traj.times.push(t);
    traj.states.push(x.clone());
    traj.inputs.push(out.input.clone());
    traj.deltas.push(out.delta);
    traj.h_values.push(h);
    traj.v_values.push(v);
    traj.vc_values.push(if probes.barrier.is_some() { vc_from_h(h) } else { 0.0 });
    traj.kkt_residuals.push(out.qp.as_ref().map_or(0.0, |q| q.kkt_residual));
}

fn field(
    system: &ControlAffineSystem,
    perturbation: &Perturbation,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut dx = system.vector_field(t, x, u)?;
    if let Some(d) = perturbation.eval(t, x)? {
        if d.len() != dx.len() {
            return Err(Error::DimensionMismatch {
                what: "perturbation",
                expected: dx.len(),
                got: d.len(),
            });
        }
        dx += d;
    }
    Ok(dx)
}

fn rk4_step(
    system: &ControlAffineSystem,
    perturbation: &Perturbation,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let half = 0.5 * dt;
    let k1 = field(system, perturbation, t, x, u)?;
    let k2 = field(system, perturbation, t + half, &(x + &k1 * half), u)?;
    let k3 = field(system, perturbation, t + half, &(x + &k2 * half), u)?;
    let k4 = field(system, perturbation, t + dt, &(x + &k3 * dt), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::ExtendedClassK;
    use nalgebra::{dvector, DMatrix};

    fn decay() -> ControlAffineSystem {
        ControlAffineSystem::new(1, 1, |x| -x.clone(), |_| DMatrix::zeros(1, 1)).unwrap()
    }

    fn zero_input(_: f64, _: &DVector<f64>) -> Result<ControlOutput> {
        Ok(ControlOutput::open_loop(dvector![0.0]))
    }

    fn decay_error(dt: f64) -> f64 {
        let traj = simulate(&decay(), zero_input, &Perturbation::None, &Probes::default(), dvector![1.0], 1.0, dt)
            .unwrap();
        (traj.final_state().unwrap()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn stationary_field_keeps_state() {
        let sys = ControlAffineSystem::new(2, 1, |_| DVector::zeros(2), |_| DMatrix::zeros(2, 1)).unwrap();
        let probes = Probes {
            barrier: Some(ZeroingBarrier::new(
                |x| x[0] - x[1],
                |_| dvector![1.0, -1.0],
                ExtendedClassK::linear(1.0).unwrap(),
            )),
            clf: None,
        };
        let traj = simulate(
            &sys,
            |t, _| Ok(ControlOutput::open_loop(dvector![t.sin() * 100.0])),
            &Perturbation::None,
            &probes,
            dvector![3.0, 1.0],
            0.5,
            0.01,
        )
        .unwrap();
        assert_eq!(traj.len(), 51);
        assert!(traj.states.iter().all(|x| *x == dvector![3.0, 1.0]));
        assert!(traj.h_values.iter().all(|h| *h == 2.0));
    }

    #[test]
    fn exponential_decay_endpoint() {
        let traj = simulate(&decay(), zero_input, &Perturbation::None, &Probes::default(), dvector![2.0], 1.0, 1e-3)
            .unwrap();
        let exact = 2.0 * (-1.0f64).exp();
        let got = traj.final_state().unwrap()[0];
        assert!(((got - exact) / exact).abs() < 1e-9);
        assert_eq!(traj.len(), 1001);
        assert_eq!(traj.times[1000], 1000.0 * 1e-3);
    }

    #[test]
    fn rk4_error_ratio_per_halving() {
        for dt in [0.1, 0.05, 0.025] {
            let ratio = decay_error(dt) / decay_error(dt / 2.0);
            assert!((8.0..=32.0).contains(&ratio), "dt={dt}: ratio {ratio}");
        }
    }

    #[test]
    fn rejects_bad_step() {
        let r = simulate(&decay(), zero_input, &Perturbation::None, &Probes::default(), dvector![1.0], 1.0, 0.0);
        assert!(matches!(r.unwrap_err().reason, Error::InvalidParameter { name: "dt", .. }));
        let r = simulate(&decay(), zero_input, &Perturbation::None, &Probes::default(), dvector![1.0], 1e-4, 1e-3);
        assert!(r.is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let blowup = ControlAffineSystem::new(1, 1, |x| dvector![x[0] * x[0]], |_| DMatrix::zeros(1, 1)).unwrap();
        let err = simulate(&blowup, zero_input, &Perturbation::None, &Probes::default(), dvector![1.0], 5.0, 0.1)
            .unwrap_err();
        match err.reason {
            Error::Divergence { step, .. } => {
                assert!(step > 1);
                assert_eq!(err.partial.len(), step);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn controller_failure_keeps_partial_trajectory() {
        let ctrl = |t: f64, _: &DVector<f64>| {
            if t > 0.25 {
                Err(Error::RelativeDegree { norm: 0.0, state: None })
            } else {
                Ok(ControlOutput::open_loop(dvector![0.0]))
            }
        };
        let err = simulate(&decay(), ctrl, &Perturbation::None, &Probes::default(), dvector![1.0], 1.0, 0.1)
            .unwrap_err();
        assert_eq!(err.partial.len(), 3);
        assert!(matches!(err.reason, Error::RelativeDegree { state: Some(_), .. }));
    }

    #[test]
    fn disturbance_bound_is_enforced() {
        let p = Perturbation::non_vanishing(dvector![1.0], |t| 2.0 * t, 0.5);
        let err = simulate(&decay(), zero_input, &p, &Probes::default(), dvector![1.0], 1.0, 0.1).unwrap_err();
        assert!(matches!(err.reason, Error::DisturbanceBound { .. }));
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let p = Perturbation::non_vanishing(dvector![1.0], |t| 0.3 * t.cos(), 0.3);
        let run = || simulate(&decay(), zero_input, &p, &Probes::default(), dvector![1.0], 2.0, 0.01).unwrap();
        assert_eq!(run(), run());
    }
}
