//! Auxiliary particle filters for joint state and time-varying parameter
//! estimation.
//!
//! Three transition operations share one pipeline:
//!
//! * [`pf_state_step`] estimates states only; parameters are carried along
//!   unchanged.
//! * [`pf_tvp_step`] adds a Gaussian random walk with a fixed drift constant
//!   to the parameter particles.
//! * [`pf_tvp_plus_step`] also estimates the drift constant online with
//!   Liu-West kernel shrinkage. Drift constants live in logit coordinates
//!   between `sigma_min` and `sigma_max`, so every mapped value stays inside
//!   the bounds.
//!
//! Each step propagates every particle through the ODE solver once. The
//! predictor computed for the fitness weights is reused as the repropagated
//! state because the solver is deterministic and parameters are innovated
//! only after propagation.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Open01, Uniform};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::ObservationSet;
use crate::ensemble::{
    log_likelihood, psd_factor, resample_auxiliary, standard_normal, weighted_covariance,
    weighted_mean, weighted_quantile, weighted_std, weights_from_log, Ensemble, EnsembleError,
    GaussianNoiseSpec, Purpose, RngStream,
};
use crate::models::BenchmarkModel;
use crate::ode::{propagate_interval, MultistepHistory, OdeError, Propagated, SolverSpec};

/// Log weight ratios are clamped to this magnitude before exponentiation.
const LOG_RATIO_CLAMP: f64 = 700.0;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("step {step}, particle {particle}: propagation failed: {source}")]
    Propagation {
        step: usize,
        particle: usize,
        #[source]
        source: OdeError,
    },
    #[error("step {step}, particle {particle}: re-integrated state differs from reused predictor")]
    PredictorMismatch { step: usize, particle: usize },
    #[error("step {step}: {source}")]
    Statistics {
        step: usize,
        #[source]
        source: EnsembleError,
    },
    #[error("step {step}: observation at t = {t_obs} does not follow ensemble time {t_ens}")]
    ObservationTime { step: usize, t_obs: f64, t_ens: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    PfState,
    PfTvp,
    PfTvpPlus,
}

impl FilterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterKind::PfState => "pf-state",
            FilterKind::PfTvp => "pf-tvp",
            FilterKind::PfTvpPlus => "pf-tvp-plus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriftSharing {
    /// One drift constant shared by every parameter.
    #[default]
    Shared,
    /// One drift constant per parameter.
    PerParameter,
}

/// Coordinates in which drift constants are shrunk and perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkSpace {
    #[default]
    Logit,
    /// Work on sigma directly and clamp into the bounds afterwards.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DriftSpec {
    Fixed {
        sigma_e: f64,
    },
    Estimated {
        sigma_min: f64,
        sigma_max: f64,
        delta: f64,
        #[serde(default)]
        sharing: DriftSharing,
        #[serde(default)]
        space: ShrinkSpace,
    },
}

impl DriftSpec {
    /// Number of drift-constant columns carried per particle.
    pub fn drift_dim(&self, dim_param: usize) -> usize {
        match self {
            DriftSpec::Fixed { .. } => 0,
            DriftSpec::Estimated { sharing, .. } => match sharing {
                DriftSharing::Shared => 1,
                DriftSharing::PerParameter => dim_param,
            },
        }
    }
}

/// Shrinkage `a = (3δ - 1) / (2δ)` and kernel variance factor `h² = 1 - a²`.
pub fn shrinkage_factors(delta: f64) -> (f64, f64) {
    let a = (3.0 * delta - 1.0) / (2.0 * delta);
    (a, 1.0 - a * a)
}

/// Bounded map between drift constants and their logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftBounds {
    pub min: f64,
    pub max: f64,
}

impl DriftBounds {
    /// `sigma = min + (max - min) / (1 + exp(-lambda))`, nudged off the
    /// bounds when extreme logits round onto them.
    pub fn to_sigma(&self, lambda: f64) -> f64 {
        let s = self.min + (self.max - self.min) / (1.0 + (-lambda).exp());
        s.clamp(self.min.next_up(), self.max.next_down())
    }

    pub fn to_logit(&self, sigma: f64) -> f64 {
        let u = (sigma - self.min) / (self.max - self.min);
        (u / (1.0 - u)).ln()
    }

    /// Clamp onto the open interval, for natural-space drift values.
    fn clamp_open(&self, sigma: f64) -> f64 {
        let eps = 1e-9 * (self.max - self.min);
        sigma.clamp(self.min + eps, self.max - eps)
    }
}

/// Uniform prior over `[lo, hi] × nominal` for one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRange(pub f64, pub f64);

impl Default for FactorRange {
    fn default() -> Self {
        FactorRange(0.5, 1.5)
    }
}

/// Prior factor ranges; a single entry applies to every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(default = "default_ranges")]
    pub state: Vec<FactorRange>,
    #[serde(default = "default_ranges")]
    pub param: Vec<FactorRange>,
}

fn default_ranges() -> Vec<FactorRange> {
    vec![FactorRange::default()]
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            state: default_ranges(),
            param: default_ranges(),
        }
    }
}

impl PriorSpec {
    pub fn uniform(range: FactorRange) -> Self {
        PriorSpec {
            state: vec![range],
            param: vec![range],
        }
    }

    fn range_for(ranges: &[FactorRange], i: usize) -> Result<FactorRange, FilterError> {
        let r = match ranges {
            [single] => *single,
            many => *many.get(i).ok_or_else(|| {
                FilterError::Config(format!("no prior range for component {i}"))
            })?,
        };
        if !(r.0 <= r.1) {
            return Err(FilterError::Config(format!(
                "prior factor range [{}, {}] has lo > hi",
                r.0, r.1
            )));
        }
        Ok(r)
    }
}

/// How the multistep history treats the innovated state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryPolicy {
    /// Keep the last pre-innovation substep and overwrite the newest entry
    /// with the innovated state.
    #[default]
    Carry,
    /// Drop the history; the next interval starts with a BDF1 step.
    Restart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub noise: GaussianNoiseSpec,
    pub drift: DriftSpec,
    pub solver: SolverSpec,
    /// m x d selection of observed components.
    pub obs_matrix: DMatrix<f64>,
    pub priors: PriorSpec,
    pub n_particles: usize,
    pub seed: u64,
    pub history: HistoryPolicy,
    /// Re-integrate every reshuffled particle and compare against the
    /// reused predictor.
    pub verify_predictor_reuse: bool,
}

impl FilterConfig {
    pub fn validate(&self, model: &BenchmarkModel) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::Config(m));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        if !(self.noise.sigma_d > 0.0) {
            return bad(format!("sigma_d must be positive, got {}", self.noise.sigma_d));
        }
        if !(self.noise.sigma_c >= 0.0) {
            return bad(format!("sigma_c must be nonnegative, got {}", self.noise.sigma_c));
        }
        if !(self.solver.step > 0.0) {
            return bad(format!("solver step must be positive, got {}", self.solver.step));
        }
        let d = model.dim_state();
        let g = &self.obs_matrix;
        if g.ncols() != d || g.nrows() == 0 || g.nrows() > d {
            return bad(format!(
                "observation matrix is {}x{}, expected m x {d} with 1 <= m <= {d}",
                g.nrows(),
                g.ncols()
            ));
        }
        let mut used = vec![false; d];
        for row in g.row_iter() {
            let ones: Vec<usize> = (0..d).filter(|&c| row[c] == 1.0).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros != d - 1 || used[ones[0]] {
                return bad("observation matrix rows must be distinct unit basis vectors".into());
            }
            used[ones[0]] = true;
        }
        match (self.kind, self.drift) {
            (FilterKind::PfTvp, DriftSpec::Fixed { sigma_e }) if !(sigma_e >= 0.0) => {
                bad(format!("sigma_e must be nonnegative, got {sigma_e}"))
            }
            (
                FilterKind::PfTvpPlus,
                DriftSpec::Estimated {
                    sigma_min,
                    sigma_max,
                    delta,
                    ..
                },
            ) => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min) {
                    bad(format!(
                        "drift bounds need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
                    ))
                } else if !(delta > 1.0 / 3.0 && delta < 1.0) {
                    bad(format!("discount factor must lie in (1/3, 1), got {delta}"))
                } else {
                    Ok(())
                }
            }
            (FilterKind::PfTvp, DriftSpec::Estimated { .. }) => {
                bad("pf-tvp needs a fixed drift constant".into())
            }
            (FilterKind::PfTvpPlus, DriftSpec::Fixed { .. }) => {
                bad("pf-tvp-plus needs an estimated drift mode".into())
            }
            _ => Ok(()),
        }
    }

    fn drift_bounds(&self) -> Option<(DriftBounds, ShrinkSpace)> {
        match self.drift {
            DriftSpec::Estimated {
                sigma_min,
                sigma_max,
                space,
                ..
            } if self.kind == FilterKind::PfTvpPlus => Some((
                DriftBounds {
                    min: sigma_min,
                    max: sigma_max,
                },
                space,
            )),
            _ => None,
        }
    }
}

/// Quantiles of one posterior component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub q025: f64,
    pub q16: f64,
    pub q50: f64,
    pub q84: f64,
    pub q975: f64,
}

pub const BAND_LEVELS: [f64; 5] = [0.025, 0.16, 0.5, 0.84, 0.975];

impl Bands {
    fn from_quantiles(q: &[f64]) -> Self {
        Bands {
            q025: q[0],
            q16: q[1],
            q50: q[2],
            q84: q[3],
            q975: q[4],
        }
    }

    pub fn contains68(&self, v: f64) -> bool {
        self.q16 <= v && v <= self.q84
    }

    pub fn contains95(&self, v: f64) -> bool {
        self.q025 <= v && v <= self.q975
    }
}

/// Posterior summary after assimilating one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub state_bands: Vec<Bands>,
    pub theta_mean: Vec<f64>,
    pub theta_std: Vec<f64>,
    pub theta_bands: Vec<Bands>,
    /// Drift constants in natural units; empty with a fixed drift.
    pub sigma_mean: Vec<f64>,
    pub sigma_std: Vec<f64>,
    pub sigma_bands: Vec<Bands>,
    pub retention: f64,
    pub degenerate: bool,
}

fn summarize(values: &DMatrix<f64>, weights: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<Bands>) {
    if values.ncols() == 0 {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let mean = weighted_mean(values, weights);
    let std = weighted_std(values, weights);
    let bands = values
        .column_iter()
        .map(|c| {
            let col: Vec<f64> = c.iter().copied().collect();
            Bands::from_quantiles(&weighted_quantile(&col, weights.as_slice(), &BAND_LEVELS))
        })
        .collect();
    (mean.iter().copied().collect(), std.iter().copied().collect(), bands)
}

/// Drift constants of every particle in natural units (N x q).
pub fn drift_sigmas(ens: &Ensemble, config: &FilterConfig) -> DMatrix<f64> {
    match config.drift_bounds() {
        Some((bounds, ShrinkSpace::Logit)) => ens.drift_logits.map(|l| bounds.to_sigma(l)),
        Some((_, ShrinkSpace::Natural)) => ens.drift_logits.clone(),
        None => DMatrix::zeros(ens.len(), 0),
    }
}

fn record(ens: &Ensemble, config: &FilterConfig, retention: f64, degenerate: bool) -> StepRecord {
    let (state_mean, state_std, state_bands) = summarize(&ens.states, &ens.weights);
    let (theta_mean, theta_std, theta_bands) = summarize(&ens.params, &ens.weights);
    let (sigma_mean, sigma_std, sigma_bands) = summarize(&drift_sigmas(ens, config), &ens.weights);
    StepRecord {
        t: ens.t,
        state_mean,
        state_std,
        state_bands,
        theta_mean,
        theta_std,
        theta_bands,
        sigma_mean,
        sigma_std,
        sigma_bands,
        retention,
        degenerate,
    }
}

fn uniform_factor<R: Rng>(rng: &mut R, nominal: f64, range: FactorRange) -> f64 {
    let (a, b) = (range.0 * nominal, range.1 * nominal);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo == hi {
        return lo;
    }
    rng.sample(Uniform::new_inclusive(lo, hi).expect("finite bounds"))
}

/// Draw the initial equally weighted sample at t = 0.
///
/// States and parameters are uniform over factor ranges of the nominal
/// initial state and `theta(0)`. Estimated drift constants are uniform on
/// `(sigma_min, sigma_max)` and stored as logits.
pub fn init_ensemble(
    config: &FilterConfig,
    model: &BenchmarkModel,
    rng: &RngStream,
) -> Result<Ensemble, FilterError> {
    config.validate(model)?;
    let n = config.n_particles;
    let d = model.dim_state();
    let p = model.dim_param();
    let q = match config.kind {
        FilterKind::PfTvpPlus => config.drift.drift_dim(p),
        _ => 0,
    };
    let x0 = &model.initial_state;
    let theta0 = model.theta_at(0.0);
    let state_ranges: Vec<FactorRange> = (0..d)
        .map(|i| PriorSpec::range_for(&config.priors.state, i))
        .collect::<Result<_, _>>()?;
    let param_ranges: Vec<FactorRange> = (0..p)
        .map(|i| PriorSpec::range_for(&config.priors.param, i))
        .collect::<Result<_, _>>()?;

    let mut draw = rng.substream(0, Purpose::Init);
    let mut states = DMatrix::zeros(n, d);
    let mut params = DMatrix::zeros(n, p);
    let mut drift = DMatrix::zeros(n, q);
    for row in 0..n {
        for i in 0..d {
            states[(row, i)] = uniform_factor(&mut draw, x0[i], state_ranges[i]);
        }
        for i in 0..p {
            params[(row, i)] = uniform_factor(&mut draw, theta0[i], param_ranges[i]);
        }
        if let Some((bounds, space)) = config.drift_bounds() {
            for i in 0..q {
                let u: f64 = draw.sample(Open01);
                let sigma = bounds.min + u * (bounds.max - bounds.min);
                drift[(row, i)] = match space {
                    ShrinkSpace::Logit => bounds.to_logit(sigma),
                    ShrinkSpace::Natural => sigma,
                };
            }
        }
    }
    let histories = (0..n)
        .map(|row| MultistepHistory::new(0.0, states.row(row).transpose()))
        .collect();
    Ok(Ensemble {
        t: 0.0,
        states,
        params,
        drift_logits: drift,
        weights: DVector::from_element(n, 1.0 / n as f64),
        histories,
    })
}

/// Output of [`shrink_drift`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShrunkDrift {
    /// `a λ + (1 - a) λ̄` for every particle.
    pub values: DMatrix<f64>,
    pub a: f64,
    pub h2: f64,
    /// Weighted mean of the pre-shrink values.
    pub mean: DVector<f64>,
    /// Weighted covariance of the pre-shrink values.
    pub cov: DMatrix<f64>,
}

/// Shrink drift values toward their weighted mean.
pub fn shrink_drift(drift: &DMatrix<f64>, weights: &DVector<f64>, delta: f64) -> ShrunkDrift {
    let (a, h2) = shrinkage_factors(delta);
    let mean = weighted_mean(drift, weights);
    let cov = weighted_covariance(drift, weights);
    let mut values = drift * a;
    for mut row in values.row_iter_mut() {
        row += mean.transpose() * (1.0 - a);
    }
    ShrunkDrift {
        values,
        a,
        h2,
        mean,
        cov,
    }
}

fn propagate_all(
    model: &BenchmarkModel,
    ens: &Ensemble,
    indices: Option<&[usize]>,
    solver: &SolverSpec,
    t_obs: f64,
    step: usize,
) -> Result<Vec<Propagated>, FilterError> {
    let n = ens.len();
    let results: Vec<Result<Propagated, OdeError>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let src = indices.map_or(k, |idx| idx[k]);
            propagate_interval(
                model.ode.as_ref(),
                &ens.histories[src],
                &ens.param(src),
                solver,
                ens.t,
                t_obs,
            )
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(particle, r)| {
            r.map_err(|source| FilterError::Propagation {
                step,
                particle,
                source,
            })
        })
        .collect()
}

/// Which parameter update a step applies.
enum ParamUpdate {
    Frozen,
    Fixed(f64),
    Estimated {
        delta: f64,
        bounds: DriftBounds,
        space: ShrinkSpace,
        sharing: DriftSharing,
    },
}

fn step_impl(
    ens: Ensemble,
    t_obs: f64,
    y: &DVector<f64>,
    step: usize,
    config: &FilterConfig,
    model: &BenchmarkModel,
    rng: &RngStream,
    update: ParamUpdate,
) -> Result<(Ensemble, StepRecord), FilterError> {
    if !(t_obs > ens.t) {
        return Err(FilterError::ObservationTime {
            step,
            t_obs,
            t_ens: ens.t,
        });
    }
    let n = ens.len();
    let p = ens.params.ncols();
    let g = &config.obs_matrix;
    let sigma_d = config.noise.sigma_d;
    let stream = step as u64 + 1;

    let shrunk = match update {
        ParamUpdate::Estimated { delta, .. } => {
            Some(shrink_drift(&ens.drift_logits, &ens.weights, delta))
        }
        _ => None,
    };

    let predicted = propagate_all(model, &ens, None, &config.solver, t_obs, step)?;
    let ll_pred: Vec<f64> = predicted
        .iter()
        .map(|pr| log_likelihood(y, &pr.x_end, g, sigma_d))
        .collect();

    let log_fitness: Vec<f64> = ens
        .weights
        .iter()
        .zip(&ll_pred)
        .map(|(w, ll)| w.ln() + ll)
        .collect();
    let (fitness, degenerate) = match weights_from_log(&log_fitness) {
        Some(f) => (f, false),
        None => {
            log::warn!("step {step}: all fitness weights underflowed; reusing previous weights");
            (ens.weights.clone(), true)
        }
    };
    let (indices, retention) =
        resample_auxiliary(fitness.as_slice(), &mut rng.substream(stream, Purpose::Resample))
            .map_err(|source| FilterError::Statistics { step, source })?;

    if config.verify_predictor_reuse {
        let again = propagate_all(model, &ens, Some(&indices), &config.solver, t_obs, step)?;
        for (k, pr) in again.iter().enumerate() {
            let reused = &predicted[indices[k]].x_end;
            let same = pr
                .x_end
                .iter()
                .zip(reused.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(FilterError::PredictorMismatch { step, particle: k });
            }
        }
    }

    // Reshuffle and innovate states.
    let d = ens.states.ncols();
    let sigma_c = config.noise.sigma_c;
    let mut state_rng = rng.substream(stream, Purpose::StateInnovation);
    let mut states = DMatrix::zeros(n, d);
    let mut histories = Vec::with_capacity(n);
    for (k, &src) in indices.iter().enumerate() {
        let x = &predicted[src].x_end + standard_normal(&mut state_rng, d) * sigma_c;
        states.set_row(k, &x.transpose());
        let hist = match config.history {
            HistoryPolicy::Carry => {
                let mut h = predicted[src].history.clone();
                h.overwrite_last(x);
                h
            }
            HistoryPolicy::Restart => MultistepHistory::new(t_obs, x),
        };
        histories.push(hist);
    }

    // Reshuffle and innovate parameters (and drift constants).
    let mut params = DMatrix::zeros(n, p);
    for (k, &src) in indices.iter().enumerate() {
        params.set_row(k, &ens.params.row(src));
    }
    let mut drift_logits = DMatrix::zeros(n, ens.drift_logits.ncols());
    let mut param_rng = rng.substream(stream, Purpose::ParamInnovation);
    match update {
        ParamUpdate::Frozen => {}
        ParamUpdate::Fixed(sigma_e) => {
            for k in 0..n {
                let xi = standard_normal(&mut param_rng, p) * sigma_e;
                let row = params.row(k) + xi.transpose();
                params.set_row(k, &row);
            }
        }
        ParamUpdate::Estimated {
            bounds,
            space,
            sharing,
            ..
        } => {
            let shrunk = shrunk.as_ref().expect("shrinkage computed for estimated drift");
            let q = shrunk.values.ncols();
            let factor = psd_factor(&(&shrunk.cov * shrunk.h2))
                .map_err(|source| FilterError::Statistics { step, source })?;
            let mut drift_rng = rng.substream(stream, Purpose::DriftInnovation);
            for (k, &src) in indices.iter().enumerate() {
                let mut lam =
                    shrunk.values.row(src).transpose() + &factor * standard_normal(&mut drift_rng, q);
                if space == ShrinkSpace::Natural {
                    lam.apply(|s| *s = bounds.clamp_open(*s));
                }
                drift_logits.set_row(k, &lam.transpose());

                let sigma: Vec<f64> = lam
                    .iter()
                    .map(|&l| match space {
                        ShrinkSpace::Logit => bounds.to_sigma(l),
                        ShrinkSpace::Natural => l,
                    })
                    .collect();
                let xi = standard_normal(&mut param_rng, p);
                for i in 0..p {
                    let s = match sharing {
                        DriftSharing::Shared => sigma[0],
                        DriftSharing::PerParameter => sigma[i],
                    };
                    params[(k, i)] += s * xi[i];
                }
            }
        }
    }

    // Reweight by the likelihood ratio of innovated state to predictor.
    let log_ratio: Vec<f64> = indices
        .iter()
        .enumerate()
        .map(|(k, &src)| {
            let ll = log_likelihood(y, &states.row(k).transpose(), g, sigma_d);
            (ll - ll_pred[src]).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
        })
        .collect();
    let (weights, degenerate) = match weights_from_log(&log_ratio) {
        Some(w) => (w, degenerate),
        None => (DVector::from_element(n, 1.0 / n as f64), true),
    };

    let next = Ensemble {
        t: t_obs,
        states,
        params,
        drift_logits,
        weights,
        histories,
    };
    let rec = record(&next, config, retention, degenerate);
    Ok((next, rec))
}

/// One step of the state-estimation filter; parameters are not perturbed.
pub fn pf_state_step(
    ens: Ensemble,
    t_obs: f64,
    y: &DVector<f64>,
    step: usize,
    config: &FilterConfig,
    model: &BenchmarkModel,
    rng: &RngStream,
) -> Result<(Ensemble, StepRecord), FilterError> {
    step_impl(ens, t_obs, y, step, config, model, rng, ParamUpdate::Frozen)
}

/// One step with a fixed random-walk drift constant.
pub fn pf_tvp_step(
    ens: Ensemble,
    t_obs: f64,
    y: &DVector<f64>,
    step: usize,
    config: &FilterConfig,
    model: &BenchmarkModel,
    rng: &RngStream,
) -> Result<(Ensemble, StepRecord), FilterError> {
    let DriftSpec::Fixed { sigma_e } = config.drift else {
        return Err(FilterError::Config("pf-tvp needs a fixed drift constant".into()));
    };
    step_impl(ens, t_obs, y, step, config, model, rng, ParamUpdate::Fixed(sigma_e))
}

/// One step with online drift-constant estimation.
pub fn pf_tvp_plus_step(
    ens: Ensemble,
    t_obs: f64,
    y: &DVector<f64>,
    step: usize,
    config: &FilterConfig,
    model: &BenchmarkModel,
    rng: &RngStream,
) -> Result<(Ensemble, StepRecord), FilterError> {
    let DriftSpec::Estimated {
        sigma_min,
        sigma_max,
        delta,
        sharing,
        space,
    } = config.drift
    else {
        return Err(FilterError::Config(
            "pf-tvp-plus needs an estimated drift mode".into(),
        ));
    };
    let update = ParamUpdate::Estimated {
        delta,
        bounds: DriftBounds {
            min: sigma_min,
            max: sigma_max,
        },
        space,
        sharing,
    };
    step_impl(ens, t_obs, y, step, config, model, rng, update)
}

/// Records of a full run plus the final particle sample.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub records: Vec<StepRecord>,
    pub final_ensemble: Ensemble,
}

/// Assimilate every observation in order.
pub fn run_filter_detailed(
    model: &BenchmarkModel,
    observations: &ObservationSet,
    config: &FilterConfig,
) -> Result<FilterOutput, FilterError> {
    let rng = RngStream::new(config.seed);
    let mut ens = init_ensemble(config, model, &rng)?;
    let step_fn = match config.kind {
        FilterKind::PfState => pf_state_step,
        FilterKind::PfTvp => pf_tvp_step,
        FilterKind::PfTvpPlus => pf_tvp_plus_step,
    };
    let mut records = Vec::with_capacity(observations.len());
    for j in 0..observations.len() {
        let y = observations.value(j);
        let (next, rec) = step_fn(ens, observations.times[j], &y, j, config, model, &rng)?;
        if rec.degenerate {
            log::info!("step {j} (t = {}) was degenerate", rec.t);
        }
        records.push(rec);
        ens = next;
    }
    Ok(FilterOutput {
        records,
        final_ensemble: ens,
    })
}

pub fn run_filter(
    model: &BenchmarkModel,
    observations: &ObservationSet,
    config: &FilterConfig,
) -> Result<Vec<StepRecord>, FilterError> {
    run_filter_detailed(model, observations, config).map(|o| o.records)
}
