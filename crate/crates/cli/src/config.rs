//! Experiment configuration files.
//!
//! An experiment is a TOML document naming a benchmark model, the synthetic
//! data protocol and the filter settings. See `presets/` for complete
//! examples of every experiment shipped with the tool.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pftvp_core::datagen::selection_matrix;
use pftvp_core::ensemble::GaussianNoiseSpec;
use pftvp_core::filters::{DriftSpec, FilterConfig, FilterKind, HistoryPolicy, PriorSpec};
use pftvp_core::models::{benchmark, BenchmarkModel, ThetaTruth};
use pftvp_core::ode::{substep_count, SolverSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Benchmark identifier such as `logistic/sinusoid`.
    pub model: String,
    /// Replaces the benchmark's true parameter trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<ThetaTruth>>,
    pub data: DataSettings,
    pub filter: FilterSettings,
    #[serde(default)]
    pub summary: SummarySettings,
    #[serde(default)]
    pub output: OutputSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub t_end: f64,
    pub dt_obs: f64,
    pub noise_fraction: f64,
    pub seed: u64,
    /// Observed state components; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub kind: FilterKind,
    pub n_particles: usize,
    pub seed: u64,
    pub sigma_c: f64,
    pub sigma_d: f64,
    #[serde(default = "no_drift")]
    pub drift: DriftSpec,
    #[serde(default = "default_solver")]
    pub solver: SolverSpec,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub history: HistoryPolicy,
    #[serde(default)]
    pub verify_predictor_reuse: bool,
}

fn no_drift() -> DriftSpec {
    DriftSpec::Fixed { sigma_e: 0.0 }
}

fn default_solver() -> SolverSpec {
    SolverSpec::bdf2(0.25)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySettings {
    /// Records before this time are excluded from error and coverage metrics.
    #[serde(default)]
    pub burn_in: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    /// Run directory relative to the output root; defaults to the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Benchmark model with any truth override applied.
    pub fn model(&self) -> Result<BenchmarkModel, CliError> {
        let mut model = benchmark(&self.model).map_err(|e| CliError::Config(format!("model: {e}")))?;
        if let Some(truth) = &self.truth {
            if truth.len() != model.dim_param() {
                return Err(CliError::Config(format!(
                    "truth: {} expects {} trajectories, got {}",
                    self.model,
                    model.dim_param(),
                    truth.len()
                )));
            }
            model.truth = truth.clone();
        }
        Ok(model)
    }

    pub fn obs_matrix(&self, model: &BenchmarkModel) -> Result<DMatrix<f64>, CliError> {
        let d = model.dim_state();
        match &self.data.observed {
            None => Ok(DMatrix::identity(d, d)),
            Some(idx) => {
                if idx.is_empty() || idx.iter().any(|&i| i >= d) {
                    return Err(CliError::Config(format!(
                        "data.observed: indices must be in 0..{d} and non-empty"
                    )));
                }
                Ok(selection_matrix(d, idx))
            }
        }
    }

    pub fn filter_config(&self, model: &BenchmarkModel) -> Result<FilterConfig, CliError> {
        let f = &self.filter;
        let cfg = FilterConfig {
            kind: f.kind,
            noise: GaussianNoiseSpec {
                sigma_c: f.sigma_c,
                sigma_d: f.sigma_d,
            },
            drift: f.drift,
            solver: f.solver,
            obs_matrix: self.obs_matrix(model)?,
            priors: f.priors.clone(),
            n_particles: f.n_particles,
            seed: f.seed,
            history: f.history,
            verify_predictor_reuse: f.verify_predictor_reuse,
        };
        cfg.validate(model)
            .map_err(|e| CliError::Config(format!("filter: {e}")))?;
        Ok(cfg)
    }

    /// Check every cross-field constraint without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.t_end > 0.0 && d.dt_obs > 0.0) {
            return Err(CliError::Config(
                "data: t_end and dt_obs must be positive".into(),
            ));
        }
        if !(d.noise_fraction >= 0.0) {
            return Err(CliError::Config(
                "data.noise_fraction must be nonnegative".into(),
            ));
        }
        substep_count(0.0, d.t_end, d.dt_obs)
            .map_err(|_| CliError::Config("data: dt_obs must divide t_end".into()))?;
        substep_count(0.0, d.dt_obs, self.filter.solver.step).map_err(|_| {
            CliError::Config(format!(
                "filter.solver.step {} must divide data.dt_obs {}",
                self.filter.solver.step, d.dt_obs
            ))
        })?;
        if !(self.summary.burn_in >= 0.0 && self.summary.burn_in < d.t_end) {
            return Err(CliError::Config(format!(
                "summary.burn_in must lie in [0, t_end = {}), got {}",
                d.t_end, self.summary.burn_in
            )));
        }
        let model = self.model()?;
        self.filter_config(&model)?;
        Ok(())
    }

    /// Drift constant of a fixed-drift run, used to order comparison tables.
    pub fn fixed_sigma_e(&self) -> Option<f64> {
        match (self.filter.kind, self.filter.drift) {
            (FilterKind::PfTvp, DriftSpec::Fixed { sigma_e }) => Some(sigma_e),
            _ => None,
        }
    }

    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(self.output.dir.clone().unwrap_or_else(|| PathBuf::from(&self.name)))
    }
}
