//! Certificates (barrier and Lyapunov functions), extended class-K gains, and
//! control-affine systems `ẋ = f(t, x) + g(t, x) u`.
//!
//! Gradients are supplied analytically. [`finite_difference_gradient`] exists
//! so tests and configuration checks can audit them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type InputMatrixFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Axis-aligned box standing in for the domain `𝒟`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "domain box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidParameter {
                name: "domain",
                reason: "box must have at least one dimension".into(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter {
                    name: "domain",
                    reason: format!("axis {i}: need finite lower <= upper, got [{lo}, {hi}]"),
                });
            }
        }
        Ok(Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassKKind {
    Linear { gain: f64 },
    Cubic { gain: f64 },
    Custom,
}

/// Extended class-K function: continuous, strictly increasing, zero at zero,
/// defined for negative arguments too.
#[derive(Clone)]
pub struct ExtendedClassK {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kind: ClassKKind,
}

impl fmt::Debug for ExtendedClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtendedClassK").field("kind", &self.kind).finish()
    }
}

impl ExtendedClassK {
    /// `α(r) = gain · r`.
    pub fn linear(gain: f64) -> Result<Self> {
        check_gain(gain)?;
        Ok(Self {
            eval: Arc::new(move |r| gain * r),
            kind: ClassKKind::Linear { gain },
        })
    }

    /// `α(r) = gain · r³`.
    pub fn cubic(gain: f64) -> Result<Self> {
        check_gain(gain)?;
        Ok(Self {
            eval: Arc::new(move |r| gain * r * r * r),
            kind: ClassKKind::Cubic { gain },
        })
    }

    /// Wraps an arbitrary function after checking it on `[-range, range]`.
    pub fn custom<F>(f: F, range: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let k = Self {
            eval: Arc::new(f),
            kind: ClassKKind::Custom,
        };
        k.check_on_grid(-range, range, 1001)?;
        Ok(k)
    }

    pub fn kind(&self) -> ClassKKind {
        self.kind
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    /// Checks `α(0) = 0` and strict monotonicity on `n` evenly spaced points.
    pub fn check_on_grid(&self, lo: f64, hi: f64, n: usize) -> Result<()> {
        let zero = self.eval(0.0);
        if zero != 0.0 {
            return Err(Error::InvalidClassK(format!("value at zero is {zero}")));
        }
        if n < 2 || !(lo < hi) {
            return Err(Error::InvalidClassK(format!(
                "grid needs n >= 2 and lo < hi, got n={n}, [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut prev = self.eval(lo);
        for i in 1..n {
            let r = lo + step * i as f64;
            let v = self.eval(r);
            if !v.is_finite() || v <= prev {
                return Err(Error::InvalidClassK(format!(
                    "not strictly increasing near r = {r} ({prev} -> {v})"
                )));
            }
            prev = v;
        }
        Ok(())
    }
}

fn check_gain(gain: f64) -> Result<()> {
    if gain.is_finite() && gain > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidClassK(format!("gain must be positive, got {gain}")))
    }
}

/// A scalar function of the state with an analytic gradient.
pub trait ScalarField {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Zeroing (control) barrier function `h` together with its gain `α`.
#[derive(Clone)]
pub struct ZeroingBarrier {
    h: ScalarFn,
    grad_h: GradientFn,
    alpha: ExtendedClassK,
}

impl fmt::Debug for ZeroingBarrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZeroingBarrier")
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl ZeroingBarrier {
    pub fn new<H, G>(h: H, grad_h: G, alpha: ExtendedClassK) -> Self
    where
        H: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            h: Arc::new(h),
            grad_h: Arc::new(grad_h),
            alpha,
        }
    }

    pub fn alpha(&self) -> &ExtendedClassK {
        &self.alpha
    }

    /// `α(h(x))`.
    pub fn alpha_of_h(&self, x: &DVector<f64>) -> f64 {
        self.alpha.eval(self.value(x))
    }
}

impl ScalarField for ZeroingBarrier {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.h)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_h)(x)
    }
}

/// Control Lyapunov function `V` with decay rate `c` in `L_f V + L_g V u + cV < 0`.
#[derive(Clone)]
pub struct ControlLyapunovSpec {
    v: ScalarFn,
    grad_v: GradientFn,
    rate: f64,
}

impl fmt::Debug for ControlLyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlLyapunovSpec")
            .field("rate", &self.rate)
            .finish_non_exhaustive()
    }
}

impl ControlLyapunovSpec {
    pub fn new<V, G>(v: V, grad_v: G, rate: f64) -> Result<Self>
    where
        V: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidParameter {
                name: "clf rate",
                reason: format!("must be positive, got {rate}"),
            });
        }
        Ok(Self {
            v: Arc::new(v),
            grad_v: Arc::new(grad_v),
            rate,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl ScalarField for ControlLyapunovSpec {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.v)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_v)(x)
    }
}

/// The nested family `𝒞_ε = { x : h(x) ≥ −ε }`.
#[derive(Debug, Clone)]
pub struct SafeSetFamily {
    pub barrier: ZeroingBarrier,
    pub epsilon: f64,
}

impl SafeSetFamily {
    pub fn new(barrier: ZeroingBarrier, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must be nonnegative, got {epsilon}"),
            });
        }
        Ok(Self { barrier, epsilon })
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with(x, self.epsilon)
    }

    pub fn contains_with(&self, x: &DVector<f64>, epsilon: f64) -> bool {
        self.barrier.value(x) >= -epsilon
    }
}

/// `ẋ = f(t, x) + g(t, x) u`. Autonomous systems ignore `t`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    state_dim: usize,
    input_dim: usize,
    drift: DriftFn,
    control_matrix: InputMatrixFn,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

impl ControlAffineSystem {
    pub fn new<F, G>(state_dim: usize, input_dim: usize, drift: F, control_matrix: G) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::time_varying(
            state_dim,
            input_dim,
            move |_, x| drift(x),
            move |_, x| control_matrix(x),
        )
    }

    pub fn time_varying<F, G>(
        state_dim: usize,
        input_dim: usize,
        drift: F,
        control_matrix: G,
    ) -> Result<Self>
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "system dimensions",
                reason: format!("need positive dimensions, got n={state_dim}, m={input_dim}"),
            });
        }
        Ok(Self {
            state_dim,
            input_dim,
            drift: Arc::new(drift),
            control_matrix: Arc::new(control_matrix),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let f = (self.drift)(t, x);
        if f.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: "drift output",
                expected: self.state_dim,
                got: f.len(),
            });
        }
        Ok(f)
    }

    pub fn control_matrix(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let g = (self.control_matrix)(t, x);
        if g.nrows() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: "control matrix rows",
                expected: self.state_dim,
                got: g.nrows(),
            });
        }
        if g.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "control matrix columns",
                expected: self.input_dim,
                got: g.ncols(),
            });
        }
        Ok(g)
    }

    /// Closed-loop vector field `f(t, x) + g(t, x) u`.
    pub fn vector_field(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim,
                got: u.len(),
            });
        }
        Ok(self.drift(t, x)? + self.control_matrix(t, x)? * u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    /// `L_f φ(x) = ∇φ(x) · f(x)`.
    pub lf: f64,
    /// `L_g φ(x) = ∇φ(x) · g(x)`, one entry per input.
    pub lg: DVector<f64>,
}

pub fn lie_derivatives<S: ScalarField + ?Sized>(
    field: &S,
    system: &ControlAffineSystem,
    x: &DVector<f64>,
) -> Result<LieDerivatives> {
    lie_derivatives_at(field, system, 0.0, x)
}

pub fn lie_derivatives_at<S: ScalarField + ?Sized>(
    field: &S,
    system: &ControlAffineSystem,
    t: f64,
    x: &DVector<f64>,
) -> Result<LieDerivatives> {
    let f = system.drift(t, x)?;
    let g = system.control_matrix(t, x)?;
    let grad = field.gradient(x);
    if grad.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "gradient",
            expected: system.state_dim(),
            got: grad.len(),
        });
    }
    Ok(LieDerivatives {
        lf: grad.dot(&f),
        lg: g.tr_mul(&grad),
    })
}

/// `L_f h(x) + α(h(x))` for the uncontrolled system; nonnegative exactly when
/// the ZBF inequality holds at `x`.
pub fn zbf_residual(barrier: &ZeroingBarrier, system: &ControlAffineSystem, x: &DVector<f64>) -> Result<f64> {
    let lie = lie_derivatives(barrier, system, x)?;
    Ok(lie.lf + barrier.alpha_of_h(x))
}

/// `L_f h + L_g h u + α(h)` at time `t`.
pub fn zcbf_residual_at(
    barrier: &ZeroingBarrier,
    system: &ControlAffineSystem,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let lie = lie_derivatives_at(barrier, system, t, x)?;
    if u.len() != lie.lg.len() {
        return Err(Error::DimensionMismatch {
            what: "input",
            expected: lie.lg.len(),
            got: u.len(),
        });
    }
    Ok(lie.lf + lie.lg.dot(u) + barrier.alpha_of_h(x))
}

/// Membership of `u` in `K_zcbf(x)`.
pub fn zcbf_admissible(
    barrier: &ZeroingBarrier,
    system: &ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<bool> {
    Ok(zcbf_residual_at(barrier, system, 0.0, x, u)? >= 0.0)
}

/// Lyapunov function induced by the barrier: `max(0, −h(x))`.
pub fn vc_value(barrier: &ZeroingBarrier, x: &DVector<f64>) -> f64 {
    vc_from_h(barrier.value(x))
}

pub fn vc_from_h(h: f64) -> f64 {
    if h >= 0.0 {
        0.0
    } else {
        -h
    }
}

/// Central differences with step `1e-6 · (1 + |x_i|)`.
pub fn finite_difference_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let step = 1e-6 * (1.0 + x[i].abs());
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        }),
    )
}

/// Largest relative gap between the analytic gradient and central differences.
pub fn gradient_mismatch<S: ScalarField + ?Sized>(field: &S, x: &DVector<f64>) -> f64 {
    let analytic = field.gradient(x);
    let numeric = finite_difference_gradient(|y| field.value(y), x);
    let scale = 1.0 + analytic.amax();
    (analytic - numeric).amax() / scale
}
