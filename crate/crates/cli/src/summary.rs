use nalgebra::DMatrix;
use pftvp_core::filters::{FilterKind, StepRecord};
use serde::{Deserialize, Serialize};

pub const SUMMARY_SCHEMA: &str = "pftvp.summary/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub c68: f64,
    pub c95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPosterior {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Scalar diagnostics of one filter run against the known truth.
///
/// Error, coverage and spread metrics use records with `t >= burn_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub name: String,
    pub model: String,
    pub filter: FilterKind,
    pub seed: u64,
    #[serde(default)]
    pub sigma_e: Option<f64>,
    pub n_records: usize,
    pub burn_in: f64,
    pub state_rmse: Vec<f64>,
    pub theta_rmse: Vec<f64>,
    pub state_coverage: Vec<Coverage>,
    pub theta_coverage: Vec<Coverage>,
    /// Standard deviation over time of the posterior-mean trajectory.
    pub theta_mean_std: Vec<f64>,
    pub theta_truth_std: Vec<f64>,
    pub retention_min: f64,
    pub retention_median: f64,
    pub final_sigma: Vec<SigmaPosterior>,
    pub degenerate_steps: usize,
    pub wall_time_s: f64,
}

/// Identity of a run, carried alongside its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub name: String,
    pub model: String,
    pub filter: FilterKind,
    pub seed: u64,
    pub sigma_e: Option<f64>,
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

struct Series<'a> {
    mean: Box<dyn Fn(&StepRecord) -> f64 + 'a>,
    bands: Box<dyn Fn(&StepRecord) -> pftvp_core::filters::Bands + 'a>,
}

fn series_metrics(
    records: &[&StepRecord],
    truth: &[f64],
    s: &Series,
) -> (f64, Coverage, f64, f64) {
    let n = records.len() as f64;
    let mut se = 0.0;
    let (mut c68, mut c95) = (0usize, 0usize);
    let mut means = Vec::with_capacity(records.len());
    for (r, &tv) in records.iter().zip(truth) {
        let m = (s.mean)(r);
        let b = (s.bands)(r);
        se += (m - tv).powi(2);
        c68 += b.contains68(tv) as usize;
        c95 += b.contains95(tv) as usize;
        means.push(m);
    }
    (
        (se / n).sqrt(),
        Coverage {
            c68: c68 as f64 / n,
            c95: c95 as f64 / n,
        },
        population_std(&means),
        population_std(truth),
    )
}

impl RunSummary {
    /// `truth_states` and `truth_theta` have one row per record.
    pub fn compute(
        label: &RunLabel,
        records: &[StepRecord],
        truth_states: &DMatrix<f64>,
        truth_theta: &DMatrix<f64>,
        burn_in: f64,
        wall_time_s: f64,
    ) -> Self {
        let window: Vec<usize> = (0..records.len())
            .filter(|&j| records[j].t >= burn_in)
            .collect();
        let win_records: Vec<&StepRecord> = window.iter().map(|&j| &records[j]).collect();
        let column = |m: &DMatrix<f64>, i: usize| -> Vec<f64> {
            window.iter().map(|&j| m[(j, i)]).collect()
        };

        let mut state_rmse = Vec::new();
        let mut state_coverage = Vec::new();
        for i in 0..truth_states.ncols() {
            let s = Series {
                mean: Box::new(move |r| r.state_mean[i]),
                bands: Box::new(move |r| r.state_bands[i]),
            };
            let (rmse, cov, _, _) = series_metrics(&win_records, &column(truth_states, i), &s);
            state_rmse.push(rmse);
            state_coverage.push(cov);
        }
        let mut theta_rmse = Vec::new();
        let mut theta_coverage = Vec::new();
        let mut theta_mean_std = Vec::new();
        let mut theta_truth_std = Vec::new();
        for i in 0..truth_theta.ncols() {
            let s = Series {
                mean: Box::new(move |r| r.theta_mean[i]),
                bands: Box::new(move |r| r.theta_bands[i]),
            };
            let (rmse, cov, ms, ts) = series_metrics(&win_records, &column(truth_theta, i), &s);
            theta_rmse.push(rmse);
            theta_coverage.push(cov);
            theta_mean_std.push(ms);
            theta_truth_std.push(ts);
        }

        let retention: Vec<f64> = records.iter().map(|r| r.retention).collect();
        let final_sigma = records
            .last()
            .map(|r| {
                r.sigma_mean
                    .iter()
                    .zip(&r.sigma_bands)
                    .map(|(&mean, b)| SigmaPosterior {
                        mean,
                        q025: b.q025,
                        q975: b.q975,
                    })
                    .collect()
            })
            .unwrap_or_default();

        RunSummary {
            schema: SUMMARY_SCHEMA.to_string(),
            name: label.name.clone(),
            model: label.model.clone(),
            filter: label.filter,
            seed: label.seed,
            sigma_e: label.sigma_e,
            n_records: records.len(),
            burn_in,
            state_rmse,
            theta_rmse,
            state_coverage,
            theta_coverage,
            theta_mean_std,
            theta_truth_std,
            retention_min: retention.iter().copied().fold(f64::INFINITY, f64::min),
            retention_median: median(&retention),
            final_sigma,
            degenerate_steps: records.iter().filter(|r| r.degenerate).count(),
            wall_time_s,
        }
    }

    /// Scalar columns for comparison tables; multi-component series are
    /// averaged except the drift posterior, which is listed per component.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let avg = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let mut out = vec![
            ("state_rmse".to_string(), avg(&self.state_rmse)),
            ("theta_rmse".to_string(), avg(&self.theta_rmse)),
            (
                "theta_cov68".to_string(),
                avg(&self.theta_coverage.iter().map(|c| c.c68).collect::<Vec<_>>()),
            ),
            (
                "theta_cov95".to_string(),
                avg(&self.theta_coverage.iter().map(|c| c.c95).collect::<Vec<_>>()),
            ),
            ("retention_min".to_string(), self.retention_min),
            ("retention_median".to_string(), self.retention_median),
            ("degenerate_steps".to_string(), self.degenerate_steps as f64),
        ];
        for (i, s) in self.final_sigma.iter().enumerate() {
            out.push((format!("sigma{i}_mean"), s.mean));
            out.push((format!("sigma{i}_q025"), s.q025));
            out.push((format!("sigma{i}_q975"), s.q975));
        }
        out
    }
}
