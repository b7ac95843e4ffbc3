//! Python bindings: the closed-form programs, the ACC model and the sweep.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use zcbf::acc::{self, AccState, BarrierOrientation, LeadProfile};
use zcbf::qp::{self, Halfspace, P1Instance, P2Instance, WeightedObjective};
use zcbf::sim::Trajectory;

fn to_py(e: zcbf::Error) -> PyErr {
    use zcbf::Error::*;
    match e {
        DimensionMismatch { .. }
        | RelativeDegree { .. }
        | InvalidObjective(_)
        | InvalidConstraints(_)
        | InvalidParameter { .. }
        | InvalidClassK(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Minimizer, nonpositive multipliers, active branch and KKT residual.
#[pyclass(name = "QpResult", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyQpResult {
    minimizer: Vec<f64>,
    multipliers: Vec<f64>,
    branch: &'static str,
    kkt_residual: f64,
}

impl From<qp::QpResult> for PyQpResult {
    fn from(r: qp::QpResult) -> Self {
        Self {
            minimizer: r.minimizer.as_slice().to_vec(),
            multipliers: r.multipliers.as_slice().to_vec(),
            branch: r.branch.as_str(),
            kkt_residual: r.kkt_residual,
        }
    }
}

#[pymethods]
impl PyQpResult {
    fn __repr__(&self) -> String {
        format!(
            "QpResult(minimizer={:?}, multipliers={:?}, branch='{}', kkt_residual={:e})",
            self.minimizer, self.multipliers, self.branch, self.kkt_residual
        )
    }
}

/// `γ = 1.8 g B / κ`, the ISS violation bound of the headway barrier.
#[pyfunction]
fn iss_epsilon(kappa: f64, grav: f64, disturbance_bound: f64) -> PyResult<f64> {
    zcbf::sim::iss_epsilon(kappa, grav, disturbance_bound).map_err(to_py)
}

/// `max(0, −h)`.
#[pyfunction]
fn vc_value(h: f64) -> f64 {
    zcbf::barrier::vc_from_h(h)
}

#[pyfunction]
fn solve_p1(lf_h: f64, lg_h: Vec<f64>, alpha_h: f64) -> PyResult<PyQpResult> {
    qp::solve_p1(&P1Instance::new(lf_h, DVector::from_vec(lg_h), alpha_h))
        .map(Into::into)
        .map_err(to_py)
}

/// Barrier + Lyapunov program over `(u, δ)`; with `k` the relaxation is
/// weighted as `uᵀu + k²δ²`.
#[pyfunction]
#[pyo3(signature = (lf_v, lg_v, cv, lf_h, lg_h, alpha_h, k=None))]
fn solve_p2(
    lf_v: f64,
    lg_v: Vec<f64>,
    cv: f64,
    lf_h: f64,
    lg_h: Vec<f64>,
    alpha_h: f64,
    k: Option<f64>,
) -> PyResult<PyQpResult> {
    let inst = P2Instance {
        lf_v,
        lg_v: DVector::from_vec(lg_v),
        cv,
        lf_h,
        lg_h: DVector::from_vec(lg_h),
        alpha_h,
    };
    match k {
        Some(k) => qp::solve_p2_relaxed(&inst, k),
        None => qp::solve_p2(&inst),
    }
    .map(Into::into)
    .map_err(to_py)
}

fn weighted_problem(
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    constraints: Vec<(Vec<f64>, f64)>,
) -> PyResult<(WeightedObjective, Vec<Halfspace>)> {
    let n = f.len();
    if h.len() != n || h.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err(format!("H must be {n}×{n} to match F")));
    }
    let h = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let objective = WeightedObjective::new(h, DVector::from_vec(f)).map_err(to_py)?;
    let constraints = constraints
        .into_iter()
        .map(|(a, b)| Halfspace::new(DVector::from_vec(a), b))
        .collect();
    Ok((objective, constraints))
}

/// `min ½ zᵀHz + Fᵀz` s.t. `aᵢᵀz ≤ bᵢ` by active-set enumeration, or by the
/// Gram-matrix closed form when `closed_form` is set.
#[pyfunction]
#[pyo3(signature = (h, f, constraints, closed_form=false))]
fn solve_weighted(
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    constraints: Vec<(Vec<f64>, f64)>,
    closed_form: bool,
) -> PyResult<PyQpResult> {
    let (objective, constraints) = weighted_problem(h, f, constraints)?;
    let solve = if closed_form {
        qp::solve_weighted_closed_form
    } else {
        qp::solve_weighted
    };
    solve(&objective, &constraints).map(Into::into).map_err(to_py)
}

/// Parameters of the follower model, its barrier and its Lyapunov function.
#[pyclass(name = "AccParams", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyAccParams {
    mass: f64,
    f0: f64,
    f1: f64,
    f2: f64,
    grav: f64,
    v_d: f64,
    tau_des: f64,
    kappa: f64,
    clf_rate: f64,
    p_sc: f64,
    theta_amp: f64,
    theta_period: f64,
    /// `(v_l, v_f, D)`.
    x0: (f64, f64, f64),
    /// `(start_time, a_l)` segments.
    lead_profile: Vec<(f64, f64)>,
    /// `1` for the headway barrier, `-1` for its mis-signed mirror image.
    barrier_sign: i32,
}

impl From<&acc::AccParams> for PyAccParams {
    fn from(p: &acc::AccParams) -> Self {
        Self {
            mass: p.mass,
            f0: p.f0,
            f1: p.f1,
            f2: p.f2,
            grav: p.grav,
            v_d: p.v_d,
            tau_des: p.tau_des,
            kappa: p.kappa,
            clf_rate: p.clf_rate,
            p_sc: p.p_sc,
            theta_amp: p.theta_amp,
            theta_period: p.theta_period,
            x0: (p.initial.v_l, p.initial.v_f, p.initial.d),
            lead_profile: p.lead_profile.segments().to_vec(),
            barrier_sign: match p.orientation {
                BarrierOrientation::Standard => 1,
                BarrierOrientation::Inverted => -1,
            },
        }
    }
}

impl PyAccParams {
    fn to_core(&self) -> Result<acc::AccParams, zcbf::Error> {
        let orientation = match self.barrier_sign {
            1 => BarrierOrientation::Standard,
            -1 => BarrierOrientation::Inverted,
            s => {
                return Err(zcbf::Error::InvalidParameter {
                    name: "barrier_sign",
                    reason: format!("must be 1 or -1, got {s}"),
                })
            }
        };
        let p = acc::AccParams {
            mass: self.mass,
            f0: self.f0,
            f1: self.f1,
            f2: self.f2,
            grav: self.grav,
            v_d: self.v_d,
            tau_des: self.tau_des,
            kappa: self.kappa,
            clf_rate: self.clf_rate,
            p_sc: self.p_sc,
            lead_profile: LeadProfile::new(self.lead_profile.clone())?,
            theta_amp: self.theta_amp,
            theta_period: self.theta_period,
            initial: AccState::new(self.x0.0, self.x0.1, self.x0.2),
            orientation,
        };
        p.validate()?;
        Ok(p)
    }
}

#[pymethods]
impl PyAccParams {
    /// Defaults reproduce the κ = 5, ‖Δθ‖∞ = 0.1 scenario; keywords override.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut p = Self::from(&acc::AccParams::default());
        for (key, value) in overrides.into_iter().flat_map(|d| d.iter()) {
            let key: String = key.extract()?;
            match key.as_str() {
                "mass" => p.mass = value.extract()?,
                "f0" => p.f0 = value.extract()?,
                "f1" => p.f1 = value.extract()?,
                "f2" => p.f2 = value.extract()?,
                "grav" => p.grav = value.extract()?,
                "v_d" => p.v_d = value.extract()?,
                "tau_des" => p.tau_des = value.extract()?,
                "kappa" => p.kappa = value.extract()?,
                "clf_rate" => p.clf_rate = value.extract()?,
                "p_sc" => p.p_sc = value.extract()?,
                "theta_amp" => p.theta_amp = value.extract()?,
                "theta_period" => p.theta_period = value.extract()?,
                "x0" => p.x0 = value.extract()?,
                "lead_profile" => p.lead_profile = value.extract()?,
                "barrier_sign" => p.barrier_sign = value.extract()?,
                other => return Err(PyTypeError::new_err(format!("unexpected keyword argument `{other}`"))),
            }
        }
        p.to_core().map_err(to_py)?;
        Ok(p)
    }

    /// `τ g ‖Δθ‖∞ / κ` for the current amplitude.
    fn gamma_max(&self) -> PyResult<f64> {
        self.to_core().and_then(|p| p.gamma_max()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "AccParams(kappa={}, theta_amp={}, p_sc={}, x0={:?}, barrier_sign={})",
            self.kappa, self.theta_amp, self.p_sc, self.x0, self.barrier_sign
        )
    }
}

/// Sampled closed-loop run; every attribute is a list over the sample times.
#[pyclass(name = "Trajectory", frozen, get_all)]
struct PyTrajectory {
    t: Vec<f64>,
    v_l: Vec<f64>,
    v_f: Vec<f64>,
    d: Vec<f64>,
    u: Vec<f64>,
    delta: Vec<f64>,
    h: Vec<f64>,
    v: Vec<f64>,
    v_c: Vec<f64>,
    kkt_residual: Vec<f64>,
}

impl From<Trajectory> for PyTrajectory {
    fn from(tr: Trajectory) -> Self {
        let state = |i: usize| tr.states.iter().map(|x| x[i]).collect();
        Self {
            v_l: state(0),
            v_f: state(1),
            d: state(2),
            u: tr.inputs.iter().map(|u| u[0]).collect(),
            t: tr.times,
            delta: tr.deltas,
            h: tr.h_values,
            v: tr.v_values,
            v_c: tr.vc_values,
            kkt_residual: tr.kkt_residuals,
        }
    }
}

#[pymethods]
impl PyTrajectory {
    fn min_h(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn __len__(&self) -> usize {
        self.t.len()
    }
}

/// Simulates the filtered follower from `params.x0`.
#[pyfunction]
#[pyo3(signature = (params, perturbed=true, t_final=60.0, dt=1e-3))]
fn simulate_acc(py: Python<'_>, params: &PyAccParams, perturbed: bool, t_final: f64, dt: f64) -> PyResult<PyTrajectory> {
    let p = params.to_core().map_err(to_py)?;
    py.detach(|| acc::simulate_acc(&p, perturbed, t_final, dt))
        .map(Into::into)
        .map_err(|aborted| to_py(aborted.reason))
}

/// Runs every `(κ, ‖Δθ‖∞)` cell in parallel. Each row is a dict with the
/// summary columns, or with an `error` entry when the cell failed.
#[pyfunction]
#[pyo3(signature = (params, kappa, theta_bound, t_final=60.0, dt=1e-3))]
fn sweep<'py>(
    py: Python<'py>,
    params: &PyAccParams,
    kappa: Vec<f64>,
    theta_bound: Vec<f64>,
    t_final: f64,
    dt: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let p = params.to_core().map_err(to_py)?;
    let cells = py
        .detach(|| acc::run_tradeoff_sweep(&p, &kappa, &theta_bound, t_final, dt))
        .map_err(to_py)?;
    cells
        .into_iter()
        .map(|c| {
            let row = PyDict::new(py);
            row.set_item("kappa", c.kappa)?;
            row.set_item("theta_bound", c.theta_bound)?;
            match c.outcome {
                Ok(s) => {
                    row.set_item("min_h", s.min_h)?;
                    row.set_item("gamma_max", s.gamma_max)?;
                    row.set_item("gamma_plus_min_h", s.gamma_plus_min_h)?;
                    row.set_item("min_u_over_mg", s.min_u_over_mg)?;
                }
                Err(reason) => row.set_item("error", reason)?,
            }
            Ok(row)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "zcbf")]
fn zcbf_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQpResult>()?;
    m.add_class::<PyAccParams>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(iss_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(vc_value, m)?)?;
    m.add_function(wrap_pyfunction!(solve_p1, m)?)?;
    m.add_function(wrap_pyfunction!(solve_p2, m)?)?;
    m.add_function(wrap_pyfunction!(solve_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_acc, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
