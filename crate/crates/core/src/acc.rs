//! Adaptive cruise control: a following car behind a lead car on a road with
//! uncertain grade.
//!
//! State `x = (v_l, v_f, D)`, input `u` is the wheel force in newtons:
//!
//! ```text
//! v̇_l = a_l(t)
//! v̇_f = −F_r(v_f)/m + g Δθ(t) + u/m,   F_r = f₀ + f₁ v_f + f₂ v_f²
//! Ḋ   = v_l − v_f
//! ```
//!
//! The controller only knows the nominal model (`Δθ ≡ 0`). Safety is the
//! headway barrier `h = D − τ v_f`, performance the Lyapunov function
//! `V = (v_f − v_d)²`.

use std::f64::consts::PI;

use nalgebra::{dvector, DMatrix, DVector};
use rayon::prelude::*;

use crate::barrier::{ControlAffineSystem, ControlLyapunovSpec, ExtendedClassK, ZeroingBarrier};
use crate::qp::{solve_weighted, Halfspace, QpResult, WeightedObjective};
use crate::sim::{headway_iss_epsilon, simulate, Aborted, ControlOutput, Perturbation, Probes, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccState {
    pub v_l: f64,
    pub v_f: f64,
    pub d: f64,
}

impl AccState {
    pub fn new(v_l: f64, v_f: f64, d: f64) -> Self {
        Self { v_l, v_f, d }
    }

    pub fn to_vector(self) -> DVector<f64> {
        dvector![self.v_l, self.v_f, self.d]
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        Self::new(x[0], x[1], x[2])
    }
}

/// Piecewise-constant lead acceleration: `(start_time, a_l)` segments, each
/// holding until the next start. Zero before the first segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadProfile {
    segments: Vec<(f64, f64)>,
}

impl LeadProfile {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lead_profile",
                reason: "segments must be finite".into(),
            });
        }
        if segments.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidParameter {
                name: "lead_profile",
                reason: "segment start times must be strictly increasing".into(),
            });
        }
        Ok(Self { segments })
    }

    pub fn constant(a_l: f64) -> Self {
        Self {
            segments: vec![(0.0, a_l)],
        }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn accel(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(0.0, |(_, a)| *a)
    }
}

impl Default for LeadProfile {
    /// Cruise, brake at 1 m/s² on `[15, 20)`, cruise.
    fn default() -> Self {
        Self {
            segments: vec![(0.0, 0.0), (15.0, -1.0), (20.0, 0.0)],
        }
    }
}

/// Sign of the headway barrier. `Inverted` flips `h`, which makes the
/// controller enforce the wrong side of the headway constraint; it exists to
/// exercise the violation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BarrierOrientation {
    #[default]
    Standard,
    Inverted,
}

impl BarrierOrientation {
    fn sign(self) -> f64 {
        match self {
            BarrierOrientation::Standard => 1.0,
            BarrierOrientation::Inverted => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccParams {
    /// kg
    pub mass: f64,
    /// N
    pub f0: f64,
    /// N·s/m
    pub f1: f64,
    /// N·s²/m²
    pub f2: f64,
    /// m/s²
    pub grav: f64,
    /// Desired cruise speed, m/s.
    pub v_d: f64,
    /// Time headway, s.
    pub tau_des: f64,
    /// Barrier gain in `α(h) = κ h`, 1/s.
    pub kappa: f64,
    /// Lyapunov decay rate `c`.
    pub clf_rate: f64,
    /// Weight on the relaxation `δ`.
    pub p_sc: f64,
    pub lead_profile: LeadProfile,
    /// Road-grade amplitude `‖Δθ‖∞`.
    pub theta_amp: f64,
    /// Road-grade period, s.
    pub theta_period: f64,
    pub initial: AccState,
    pub orientation: BarrierOrientation,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            grav: 9.81,
            v_d: 22.0,
            tau_des: 1.8,
            kappa: 5.0,
            clf_rate: 1.0,
            p_sc: 1.0,
            lead_profile: LeadProfile::default(),
            theta_amp: 0.1,
            theta_period: 20.0,
            initial: AccState::new(20.0, 18.0, 80.0),
            orientation: BarrierOrientation::Standard,
        }
    }
}

impl AccParams {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                })
            }
        }
        fn nonnegative(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be nonnegative, got {v}"),
                })
            }
        }
        positive("mass", self.mass)?;
        nonnegative("f0", self.f0)?;
        nonnegative("f1", self.f1)?;
        nonnegative("f2", self.f2)?;
        positive("grav", self.grav)?;
        positive("tau_des", self.tau_des)?;
        positive("kappa", self.kappa)?;
        positive("clf_rate", self.clf_rate)?;
        positive("p_sc", self.p_sc)?;
        nonnegative("theta_amp", self.theta_amp)?;
        positive("theta_period", self.theta_period)?;
        if !self.v_d.is_finite() {
            return Err(Error::InvalidParameter {
                name: "v_d",
                reason: "must be finite".into(),
            });
        }
        let x0 = self.initial;
        if ![x0.v_l, x0.v_f, x0.d].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "initial",
                reason: "initial state must be finite".into(),
            });
        }
        Ok(())
    }

    /// Aerodynamic and rolling resistance `F_r(v_f)`.
    pub fn drag(&self, v_f: f64) -> f64 {
        self.f0 + self.f1 * v_f + self.f2 * v_f * v_f
    }

    /// `Δθ(t) = θ_amp cos(2πt / period)`.
    pub fn road_grade(&self, t: f64) -> f64 {
        self.theta_amp * (2.0 * PI * t / self.theta_period).cos()
    }

    /// `γ(‖Δθ‖∞) = τ g ‖Δθ‖∞ / κ`.
    pub fn gamma_max(&self) -> Result<f64> {
        headway_iss_epsilon(self.tau_des, self.kappa, self.grav, self.theta_amp)
    }
}

/// Time derivative of the state under input `u`; the grade term is included
/// only when `perturbed`.
pub fn acc_dynamics(params: &AccParams, x: AccState, u: f64, t: f64, perturbed: bool) -> AccState {
    let grade = if perturbed {
        params.grav * params.road_grade(t)
    } else {
        0.0
    };
    AccState {
        v_l: params.lead_profile.accel(t),
        v_f: -params.drag(x.v_f) / params.mass + grade + u / params.mass,
        d: x.v_l - x.v_f,
    }
}

/// The nominal model `ẋ = f(t, x) + ĝ u`.
pub fn acc_system(params: &AccParams) -> ControlAffineSystem {
    let p = params.clone();
    let inv_m = 1.0 / params.mass;
    ControlAffineSystem::time_varying(
        3,
        1,
        move |t, x| acc_dynamics(&p, AccState::from_vector(x), 0.0, t, false).to_vector(),
        move |_, _| DMatrix::from_column_slice(3, 1, &[0.0, inv_m, 0.0]),
    )
    .expect("ACC dimensions are fixed and positive")
}

/// Road-grade disturbance `(0, g Δθ(t), 0)`, or none when the amplitude is zero.
pub fn acc_perturbation(params: &AccParams) -> Perturbation {
    if params.theta_amp == 0.0 {
        return Perturbation::None;
    }
    let p = params.clone();
    Perturbation::non_vanishing(
        dvector![0.0, params.grav, 0.0],
        move |t| p.road_grade(t),
        params.theta_amp,
    )
}

/// `h = D − τ v_f` with `α(h) = κ h` (sign flipped when inverted).
pub fn acc_barrier(params: &AccParams) -> Result<ZeroingBarrier> {
    let s = params.orientation.sign();
    let tau = params.tau_des;
    Ok(ZeroingBarrier::new(
        move |x| s * (x[2] - tau * x[1]),
        move |_| dvector![0.0, -s * tau, s],
        ExtendedClassK::linear(params.kappa)?,
    ))
}

/// `V = (v_f − v_d)²` with decay rate `c`.
pub fn acc_clf(params: &AccParams) -> Result<ControlLyapunovSpec> {
    let v_d = params.v_d;
    ControlLyapunovSpec::new(
        move |x| (x[1] - v_d).powi(2),
        move |x| dvector![0.0, 2.0 * (x[1] - v_d), 0.0],
        params.clf_rate,
    )
}

/// Matrices of the weighted program over `(u, δ)`:
/// `min ½ zᵀHz + Fᵀz` s.t. `A_clf z ≤ b_clf`, `A_zcbf z ≤ b_zcbf`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_clf: DVector<f64>,
    pub b_clf: f64,
    pub a_zcbf: DVector<f64>,
    pub b_zcbf: f64,
}

impl AccQp {
    pub fn objective(&self) -> Result<WeightedObjective> {
        WeightedObjective::new(self.h.clone(), self.f.clone())
    }

    /// `[clf, zcbf]`, the order [`crate::qp::Branch`] expects.
    pub fn constraints(&self) -> [Halfspace; 2] {
        [
            Halfspace::new(self.a_clf.clone(), self.b_clf),
            Halfspace::new(self.a_zcbf.clone(), self.b_zcbf),
        ]
    }
}

/// Assembles the program from the nominal model.
///
/// With `e = v_f − v_d`:
/// `H = 2 diag(1/m², p_sc)`, `F = −2 (F_r/m², 0)`,
/// `A_clf = (2e/m, −1)`, `b_clf = 2e F_r/m − c e²`,
/// `A_zcbf = (τ/m, 0)`, `b_zcbf = τ F_r/m + (v_l − v_f) + κ h`
/// (signs of the barrier row flipped for the inverted orientation).
pub fn acc_qp_matrices(params: &AccParams, x: AccState) -> AccQp {
    let m = params.mass;
    let fr = params.drag(x.v_f);
    let e = x.v_f - params.v_d;
    let s = params.orientation.sign();
    let tau = params.tau_des;
    let h = s * (x.d - tau * x.v_f);
    AccQp {
        h: DMatrix::from_diagonal(&dvector![2.0 / (m * m), 2.0 * params.p_sc]),
        f: dvector![-2.0 * fr / (m * m), 0.0],
        a_clf: dvector![2.0 * e / m, -1.0],
        b_clf: 2.0 * e / m * fr - params.clf_rate * e * e,
        a_zcbf: dvector![s * tau / m, 0.0],
        b_zcbf: s * (tau * fr / m + x.v_l - x.v_f) + params.kappa * h,
    }
}

/// Weighted barrier + Lyapunov controller on the nominal model.
pub fn acc_controller(params: &AccParams) -> impl Fn(f64, &DVector<f64>) -> Result<ControlOutput> + Send + Sync {
    let p = params.clone();
    move |_t, x| {
        let qp = acc_qp_matrices(&p, AccState::from_vector(x));
        let r = solve_weighted(&qp.objective()?, &qp.constraints())?;
        Ok(output_from(r))
    }
}

fn output_from(r: QpResult) -> ControlOutput {
    ControlOutput {
        input: DVector::from_element(1, r.minimizer[0]),
        delta: r.minimizer[1],
        qp: Some(r),
    }
}

/// Recorded quantities. The barrier probe is always the true headway barrier,
/// whatever orientation the controller was given.
pub fn acc_probes(params: &AccParams) -> Result<Probes> {
    let truth = AccParams {
        orientation: BarrierOrientation::Standard,
        ..params.clone()
    };
    Ok(Probes {
        barrier: Some(acc_barrier(&truth)?),
        clf: Some(acc_clf(params)?),
    })
}

/// Closed-loop run from `params.initial`; the grade disturbance is applied
/// only when `perturbed`.
pub fn simulate_acc(
    params: &AccParams,
    perturbed: bool,
    t_final: f64,
    dt: f64,
) -> std::result::Result<Trajectory, Box<Aborted>> {
    let setup = params
        .validate()
        .and_then(|_| acc_probes(params))
        .map_err(|reason| {
            Box::new(Aborted {
                partial: Trajectory::default(),
                reason,
            })
        })?;
    let perturbation = if perturbed {
        acc_perturbation(params)
    } else {
        Perturbation::None
    };
    simulate(
        &acc_system(params),
        acc_controller(params),
        &perturbation,
        &setup,
        params.initial.to_vector(),
        t_final,
        dt,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub min_h: f64,
    pub gamma_max: f64,
    pub gamma_plus_min_h: f64,
    /// `min_t u(t) / (m g)`; negative values are braking.
    pub min_u_over_mg: f64,
}

impl CellSummary {
    pub fn from_trajectory(params: &AccParams, traj: &Trajectory, bound: f64) -> Result<Self> {
        let gamma_max = headway_iss_epsilon(params.tau_des, params.kappa, params.grav, bound)?;
        let min_h = traj.min_h();
        Ok(Self {
            min_h,
            gamma_max,
            gamma_plus_min_h: gamma_max + min_h,
            min_u_over_mg: traj.min_input(0) / (params.mass * params.grav),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub kappa: f64,
    pub theta_bound: f64,
    pub outcome: std::result::Result<CellSummary, String>,
}

/// Simulates every `(κ, ‖Δθ‖∞)` pair. Rows come back κ-major in grid order
/// regardless of how rayon schedules the cells.
pub fn run_tradeoff_sweep(
    params: &AccParams,
    kappa_grid: &[f64],
    theta_bounds: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<Vec<SweepCell>> {
    if kappa_grid.is_empty() || theta_bounds.is_empty() {
        return Err(Error::InvalidParameter {
            name: "sweep grid",
            reason: "kappa and theta grids must be nonempty".into(),
        });
    }
    let cells: Vec<(f64, f64)> = kappa_grid
        .iter()
        .flat_map(|&k| theta_bounds.iter().map(move |&b| (k, b)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(kappa, theta_bound)| SweepCell {
            kappa,
            theta_bound,
            outcome: run_cell(params, kappa, theta_bound, t_final, dt),
        })
        .collect())
}

fn run_cell(
    params: &AccParams,
    kappa: f64,
    bound: f64,
    t_final: f64,
    dt: f64,
) -> std::result::Result<CellSummary, String> {
    let cell = AccParams {
        kappa,
        theta_amp: bound,
        ..params.clone()
    };
    let traj = simulate_acc(&cell, bound > 0.0, t_final, dt).map_err(|e| e.to_string())?;
    CellSummary::from_trajectory(&cell, &traj, bound).map_err(|e| e.to_string())
}
