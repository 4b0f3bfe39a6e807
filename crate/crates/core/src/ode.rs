//! Fixed-step integration of parameterized ODE systems.
//!
//! Particles are advanced with implicit BDF1/BDF2 steps solved by damped
//! Newton iteration. Classical RK4 is provided for generating reference
//! trajectories at a fine step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Right-hand side `dx/dt = f(t, x, theta)` of an ODE system.
pub trait OdeModel: Send + Sync {
    fn dim_state(&self) -> usize;

    fn dim_param(&self) -> usize;

    fn rhs(&self, t: f64, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64>;

    /// Analytic state Jacobian `df/dx`, when the model provides one.
    fn jacobian(&self, _t: f64, _x: &DVector<f64>, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

type RhsFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// An [`OdeModel`] assembled from closures.
pub struct ClosureModel {
    dim_state: usize,
    dim_param: usize,
    rhs: Box<RhsFn>,
    jac: Option<Box<JacFn>>,
}

impl ClosureModel {
    pub fn new<F>(dim_state: usize, dim_param: usize, rhs: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ClosureModel {
            dim_state,
            dim_param,
            rhs: Box::new(rhs),
            jac: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl OdeModel for ClosureModel {
    fn dim_state(&self) -> usize {
        self.dim_state
    }

    fn dim_param(&self) -> usize {
        self.dim_param
    }

    fn rhs(&self, t: f64, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(t, x, theta)
    }

    fn jacobian(&self, t: f64, x: &DVector<f64>, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(t, x, theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Bdf1,
    Bdf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub method: Method,
    pub step: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_newton_max_iter() -> usize {
    25
}

/// Maximum number of step halvings per Newton iteration.
const MAX_HALVINGS: usize = 5;

impl SolverSpec {
    pub fn new(method: Method, step: f64) -> Self {
        SolverSpec {
            method,
            step,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
        }
    }

    pub fn bdf2(step: f64) -> Self {
        Self::new(Method::Bdf2, step)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("Newton iteration failed to converge at t = {t} (residual {residual:e})")]
    NewtonFailed { t: f64, residual: f64 },
    #[error("BDF2 needs two history entries, found {found}")]
    HistoryTooShort { found: usize },
    #[error("method {0:?} is not a BDF method")]
    NotBdf(Method),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("interval [{t_start}, {t_end}] is not a whole number of steps of size {step}")]
    NonIntegerSubsteps { t_start: f64, t_end: f64, step: f64 },
    #[error("history ends at t = {history_end} but the interval starts at t = {t_start}")]
    HistoryMismatch { history_end: f64, t_start: f64 },
    #[error("substep {substep}: {source}")]
    Substep {
        substep: usize,
        #[source]
        source: Box<OdeError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub t: f64,
    pub x: DVector<f64>,
}

/// The last one or two solution points of a particle, most recent last.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepHistory {
    previous: Option<HistoryEntry>,
    last: HistoryEntry,
}

impl MultistepHistory {
    pub fn new(t: f64, x: DVector<f64>) -> Self {
        MultistepHistory {
            previous: None,
            last: HistoryEntry { t, x },
        }
    }

    /// Two-entry history; `t1` must be later than `t0`.
    pub fn from_pair(t0: f64, x0: DVector<f64>, t1: f64, x1: DVector<f64>) -> Self {
        assert!(t1 > t0, "history times must increase");
        MultistepHistory {
            previous: Some(HistoryEntry { t: t0, x: x0 }),
            last: HistoryEntry { t: t1, x: x1 },
        }
    }

    pub fn len(&self) -> usize {
        1 + self.previous.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> &HistoryEntry {
        &self.last
    }

    pub fn previous(&self) -> Option<&HistoryEntry> {
        self.previous.as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.previous.iter().chain(std::iter::once(&self.last))
    }

    pub fn push(&mut self, t: f64, x: DVector<f64>) {
        debug_assert!(t > self.last.t);
        let old = std::mem::replace(&mut self.last, HistoryEntry { t, x });
        self.previous = Some(old);
    }

    /// Replace the newest state, keeping its time stamp.
    pub fn overwrite_last(&mut self, x: DVector<f64>) {
        self.last.x = x;
    }

    /// Forget everything but the newest entry.
    pub fn restart(&mut self) {
        self.previous = None;
    }
}

fn check_finite(t: f64, v: &DVector<f64>) -> Result<(), OdeError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OdeError::NonFinite { t })
    }
}

fn check_step(h: f64) -> Result<(), OdeError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(OdeError::InvalidStep(h))
    }
}

/// One classical Runge-Kutta step with `theta` held fixed.
pub fn rk4_step(
    model: &dyn OdeModel,
    t: f64,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, OdeError> {
    rk4_step_with(model, t, x, h, |_| theta.clone())
}

/// One RK4 step where the parameter vector is re-evaluated at each stage time.
pub fn rk4_step_with<P>(
    model: &dyn OdeModel,
    t: f64,
    x: &DVector<f64>,
    h: f64,
    theta_at: P,
) -> Result<DVector<f64>, OdeError>
where
    P: Fn(f64) -> DVector<f64>,
{
    check_step(h)?;
    let half = 0.5 * h;
    let th0 = theta_at(t);
    let th_mid = theta_at(t + half);
    let th1 = theta_at(t + h);

    let k1 = model.rhs(t, x, &th0);
    check_finite(t, &k1)?;
    let k2 = model.rhs(t + half, &(x + &k1 * half), &th_mid);
    check_finite(t + half, &k2)?;
    let k3 = model.rhs(t + half, &(x + &k2 * half), &th_mid);
    check_finite(t + half, &k3)?;
    let k4 = model.rhs(t + h, &(x + &k3 * h), &th1);
    check_finite(t + h, &k4)?;

    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Central finite-difference approximation to `df/dx`.
pub fn finite_difference_jacobian(
    model: &dyn OdeModel,
    t: f64,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, OdeError> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = x.clone();
    for i in 0..d {
        let eps = (1e-6 * x[i].abs()).max(1e-6);
        probe[i] = x[i] + eps;
        let fp = model.rhs(t, &probe, theta);
        probe[i] = x[i] - eps;
        let fm = model.rhs(t, &probe, theta);
        probe[i] = x[i];
        check_finite(t, &fp)?;
        check_finite(t, &fm)?;
        jac.set_column(i, &((fp - fm) / (2.0 * eps)));
    }
    Ok(jac)
}

fn state_jacobian(
    model: &dyn OdeModel,
    t: f64,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, OdeError> {
    match model.jacobian(t, x, theta) {
        Some(j) => Ok(j),
        None => finite_difference_jacobian(model, t, x, theta),
    }
}

/// Solve `x = c + beta*h*f(t, x, theta)` for x by damped Newton iteration.
fn solve_implicit(
    model: &dyn OdeModel,
    t: f64,
    constant: &DVector<f64>,
    beta_h: f64,
    guess: &DVector<f64>,
    theta: &DVector<f64>,
    spec: &SolverSpec,
) -> Result<DVector<f64>, OdeError> {
    let residual = |x: &DVector<f64>| -> Result<DVector<f64>, OdeError> {
        let f = model.rhs(t, x, theta);
        check_finite(t, &f)?;
        Ok(x - constant - f * beta_h)
    };
    let norm = |r: &DVector<f64>| r.amax();

    let d = guess.len();
    let mut x = guess.clone();
    let mut r = residual(&x)?;
    let mut r_norm = norm(&r);

    for _ in 0..spec.newton_max_iter {
        if r_norm <= spec.newton_tol {
            return Ok(x);
        }
        let jac = DMatrix::identity(d, d) - state_jacobian(model, t, &x, theta)? * beta_h;
        let delta = match jac.lu().solve(&(-&r)) {
            Some(delta) => delta,
            None => break,
        };

        let mut scale = 1.0;
        let mut candidate = &x + &delta;
        let mut cand_r = residual(&candidate);
        for _ in 0..MAX_HALVINGS {
            match &cand_r {
                Ok(cr) if norm(cr) <= r_norm => break,
                _ => {
                    scale *= 0.5;
                    candidate = &x + &delta * scale;
                    cand_r = residual(&candidate);
                }
            }
        }
        r = cand_r?;
        r_norm = norm(&r);
        x = candidate;
    }

    if r_norm <= spec.newton_tol {
        Ok(x)
    } else {
        Err(OdeError::NewtonFailed {
            t,
            residual: r_norm,
        })
    }
}

/// Advance one implicit BDF step from the newest history entry.
///
/// BDF1: `x1 = x0 + h f(t1, x1)`.
/// BDF2: `x2 = 4/3 x1 - 1/3 x0 + 2/3 h f(t2, x2)`.
/// The history is not modified.
pub fn bdf_step(
    model: &dyn OdeModel,
    history: &MultistepHistory,
    theta: &DVector<f64>,
    spec: &SolverSpec,
) -> Result<DVector<f64>, OdeError> {
    check_step(spec.step)?;
    let h = spec.step;
    let last = history.last();
    let t_next = last.t + h;
    match spec.method {
        Method::Bdf1 => solve_implicit(model, t_next, &last.x, h, &last.x, theta, spec),
        Method::Bdf2 => {
            let prev = history.previous().ok_or(OdeError::HistoryTooShort {
                found: history.len(),
            })?;
            let constant = &last.x * (4.0 / 3.0) - &prev.x * (1.0 / 3.0);
            solve_implicit(model, t_next, &constant, h * 2.0 / 3.0, &last.x, theta, spec)
        }
        m => Err(OdeError::NotBdf(m)),
    }
}

/// Result of advancing one particle across an observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub x_end: DVector<f64>,
    pub history: MultistepHistory,
    /// State after every substep, the last one equal to `x_end`.
    pub intermediates: Vec<DVector<f64>>,
}

/// Number of whole steps of size `h` in `[t_start, t_end]`.
pub fn substep_count(t_start: f64, t_end: f64, h: f64) -> Result<usize, OdeError> {
    check_step(h)?;
    let ratio = (t_end - t_start) / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(OdeError::NonIntegerSubsteps {
            t_start,
            t_end,
            step: h,
        });
    }
    Ok(n as usize)
}

/// Integrate from `t_start` to `t_end` with `theta` held fixed.
///
/// A BDF2 request on a single-entry history takes one BDF1 step first.
pub fn propagate_interval(
    model: &dyn OdeModel,
    history: &MultistepHistory,
    theta: &DVector<f64>,
    spec: &SolverSpec,
    t_start: f64,
    t_end: f64,
) -> Result<Propagated, OdeError> {
    let h = spec.step;
    let n = substep_count(t_start, t_end, h)?;
    let history_end = history.last().t;
    if (history_end - t_start).abs() > 1e-9 * h {
        return Err(OdeError::HistoryMismatch {
            history_end,
            t_start,
        });
    }

    let mut hist = history.clone();
    let mut intermediates = Vec::with_capacity(n);
    let bootstrap = SolverSpec {
        method: Method::Bdf1,
        ..*spec
    };
    for k in 0..n {
        let t_next = t_start + (k + 1) as f64 * h;
        let wrap = |e: OdeError| OdeError::Substep {
            substep: k,
            source: Box::new(e),
        };
        let x_next = match spec.method {
            Method::Rk4 => rk4_step(model, hist.last().t, &hist.last().x, theta, h),
            Method::Bdf2 if hist.len() < 2 => bdf_step(model, &hist, theta, &bootstrap),
            _ => bdf_step(model, &hist, theta, spec),
        }
        .map_err(wrap)?;
        intermediates.push(x_next.clone());
        hist.push(t_next, x_next);
    }

    Ok(Propagated {
        x_end: hist.last().x.clone(),
        history: hist,
        intermediates,
    })
}
