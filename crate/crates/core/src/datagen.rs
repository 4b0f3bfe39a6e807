//! Synthetic truth trajectories and noisy observation sets.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{standard_normal, Purpose, RngStream};
use crate::models::{BenchmarkModel, ThetaTruth};
use crate::ode::{rk4_step_with, OdeError};

/// Step of the fine RK4 reference integration.
pub const TRUTH_STEP: f64 = 1e-3;

pub const DATASET_SCHEMA: &str = "pftvp.dataset/1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truth integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("invalid data settings: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A sampled truth trajectory, row `i` at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub times: Vec<f64>,
    /// T x d
    pub states: DMatrix<f64>,
    /// T x p
    pub thetas: DMatrix<f64>,
}

/// Integrate the model with its true parameters and sample every `dt_record`.
///
/// The first record is the initial condition at t = 0.
pub fn generate_truth(
    model: &BenchmarkModel,
    t_end: f64,
    dt_record: f64,
) -> Result<Truth, DataError> {
    if !(dt_record > 0.0 && t_end > 0.0) {
        return Err(DataError::Invalid(format!(
            "t_end ({t_end}) and dt_record ({dt_record}) must be positive"
        )));
    }
    let n_records = (t_end / dt_record).round() as usize;
    if n_records == 0 || ((n_records as f64) * dt_record - t_end).abs() > 1e-9 * t_end {
        return Err(DataError::Invalid(format!(
            "t_end {t_end} is not a multiple of dt_record {dt_record}"
        )));
    }
    let substeps = (dt_record / TRUTH_STEP).ceil() as usize;
    let h = dt_record / substeps as f64;

    let d = model.dim_state();
    let p = model.dim_param();
    let times: Vec<f64> = (0..=n_records).map(|i| i as f64 * dt_record).collect();
    let mut states = DMatrix::zeros(n_records + 1, d);
    let mut thetas = DMatrix::zeros(n_records + 1, p);

    let mut x = model.initial_state.clone();
    states.set_row(0, &x.transpose());
    thetas.set_row(0, &model.theta_at(0.0).transpose());
    for r in 1..=n_records {
        let t0 = times[r - 1];
        for k in 0..substeps {
            let t = t0 + k as f64 * h;
            x = rk4_step_with(model.ode.as_ref(), t, &x, h, |s| model.theta_at(s))?;
        }
        states.set_row(r, &x.transpose());
        thetas.set_row(r, &model.theta_at(times[r]).transpose());
    }
    Ok(Truth {
        times,
        states,
        thetas,
    })
}

/// Linear selection operator observing the listed state components.
pub fn selection_matrix(dim_state: usize, observed: &[usize]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(observed.len(), dim_state);
    for (row, &c) in observed.iter().enumerate() {
        g[(row, c)] = 1.0;
    }
    g
}

/// Noisy observations with the truth kept alongside for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    /// T x m
    pub values: DMatrix<f64>,
    /// m x d
    pub obs_matrix: DMatrix<f64>,
    /// T x d
    pub truth_states: DMatrix<f64>,
    /// T x p
    pub truth_theta: DMatrix<f64>,
    /// Standard deviation of the noise added to each observed component.
    pub noise_std: Vec<f64>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn value(&self, j: usize) -> DVector<f64> {
        self.values.row(j).transpose()
    }

    /// An observation set with no rows.
    pub fn empty(obs_matrix: DMatrix<f64>, dim_param: usize) -> Self {
        let (m, d) = obs_matrix.shape();
        ObservationSet {
            times: Vec::new(),
            values: DMatrix::zeros(0, m),
            truth_states: DMatrix::zeros(0, d),
            truth_theta: DMatrix::zeros(0, dim_param),
            noise_std: vec![0.0; m],
            obs_matrix,
        }
    }
}

fn population_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Corrupt the truth at every record after t = 0 with Gaussian noise whose
/// standard deviation is `noise_fraction` times the population standard
/// deviation of the observed component over those records.
pub fn corrupt(
    truth: &Truth,
    noise_fraction: f64,
    obs_matrix: &DMatrix<f64>,
    seed: u64,
) -> Result<ObservationSet, DataError> {
    if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
        return Err(DataError::Invalid(format!(
            "noise fraction must be nonnegative, got {noise_fraction}"
        )));
    }
    if obs_matrix.ncols() != truth.states.ncols() {
        return Err(DataError::Invalid(format!(
            "observation matrix has {} columns, the state has {}",
            obs_matrix.ncols(),
            truth.states.ncols()
        )));
    }
    let rows = truth.times.len().saturating_sub(1);
    let states = truth.states.rows(1, rows).into_owned();
    let thetas = truth.thetas.rows(1, rows).into_owned();
    let observed = &states * obs_matrix.transpose();
    let m = obs_matrix.nrows();

    let noise_std: Vec<f64> = (0..m)
        .map(|i| {
            let s = noise_fraction * population_std(observed.column(i).iter());
            if s == 0.0 && noise_fraction > 0.0 {
                log::warn!("observed component {i} has zero variance; adding no noise");
            }
            s
        })
        .collect();

    let mut rng = RngStream::new(seed).substream(0, Purpose::Observation);
    let mut values = observed.clone();
    for r in 0..rows {
        let xi = standard_normal(&mut rng, m);
        for i in 0..m {
            values[(r, i)] += noise_std[i] * xi[i];
        }
    }

    Ok(ObservationSet {
        times: truth.times[1..].to_vec(),
        values,
        obs_matrix: obs_matrix.clone(),
        truth_states: states,
        truth_theta: thetas,
        noise_std,
    })
}

/// JSON sidecar describing a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: String,
    pub model: String,
    pub constants: std::collections::BTreeMap<String, f64>,
    pub theta_roles: Vec<String>,
    pub truth: Vec<ThetaTruth>,
    pub initial_state: Vec<f64>,
    pub t_end: f64,
    pub dt_obs: f64,
    pub noise_fraction: f64,
    pub noise_std: Vec<f64>,
    pub seed: u64,
    /// Row-major observation matrix.
    pub obs_matrix: Vec<Vec<f64>>,
}

impl DatasetMeta {
    pub fn new(
        model: &BenchmarkModel,
        obs: &ObservationSet,
        t_end: f64,
        dt_obs: f64,
        noise_fraction: f64,
        seed: u64,
    ) -> Self {
        DatasetMeta {
            schema: DATASET_SCHEMA.to_string(),
            model: model.id.clone(),
            constants: model.constants.clone(),
            theta_roles: model.theta_roles.clone(),
            truth: model.truth.clone(),
            initial_state: model.initial_state.iter().copied().collect(),
            t_end,
            dt_obs,
            noise_fraction,
            noise_std: obs.noise_std.clone(),
            seed,
            obs_matrix: obs
                .obs_matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    pub fn obs_matrix(&self) -> Result<DMatrix<f64>, DataError> {
        let m = self.obs_matrix.len();
        let d = self.initial_state.len();
        if self.obs_matrix.iter().any(|r| r.len() != d) {
            return Err(DataError::Invalid("ragged observation matrix".into()));
        }
        Ok(DMatrix::from_row_iterator(
            m,
            d,
            self.obs_matrix.iter().flatten().copied(),
        ))
    }
}

/// Path of the JSON sidecar that accompanies a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

/// Write `<path>` (CSV) and its JSON sidecar.
pub fn write_dataset(path: &Path, obs: &ObservationSet, meta: &DatasetMeta) -> Result<(), DataError> {
    let m = obs.values.ncols();
    let d = obs.truth_states.ncols();
    let p = obs.truth_theta.ncols();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("y_{i}")));
    header.extend((1..=d).map(|i| format!("truth_x_{i}")));
    header.extend((1..=p).map(|i| format!("truth_theta_{i}")));
    w.write_record(&header)?;
    for j in 0..obs.len() {
        let mut row = vec![obs.times[j].to_string()];
        row.extend(obs.values.row(j).iter().map(f64::to_string));
        row.extend(obs.truth_states.row(j).iter().map(f64::to_string));
        row.extend(obs.truth_theta.row(j).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), meta)?;
    Ok(())
}

/// Read a dataset CSV and its sidecar.
pub fn read_dataset(path: &Path) -> Result<(ObservationSet, DatasetMeta), DataError> {
    let meta: DatasetMeta =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    if meta.schema != DATASET_SCHEMA {
        return Err(DataError::Invalid(format!(
            "unsupported dataset schema `{}`",
            meta.schema
        )));
    }
    let g = meta.obs_matrix()?;
    let (m, d) = g.shape();
    let p = meta.theta_roles.len();

    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let width = 1 + m + d + p;
    if r.headers()?.len() != width {
        return Err(DataError::Invalid(format!(
            "dataset has {} columns, sidecar implies {width}",
            r.headers()?.len()
        )));
    }
    let mut times = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut vals = rec.iter().map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| DataError::Invalid(format!("bad number `{s}`: {e}")))
        });
        times.push(vals.next().ok_or_else(|| DataError::Invalid("empty row".into()))??);
        for v in vals {
            flat.push(v?);
        }
    }
    let t = times.len();
    let row_width = m + d + p;
    let all = DMatrix::from_row_iterator(t, row_width, flat.into_iter());
    let obs = ObservationSet {
        times,
        values: all.columns(0, m).into_owned(),
        truth_states: all.columns(m, d).into_owned(),
        truth_theta: all.columns(m + d, p).into_owned(),
        obs_matrix: g,
        noise_std: meta.noise_std.clone(),
    };
    Ok((obs, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{benchmark, logistic_model};

    #[test]
    fn logistic_equilibrium_without_forcing() {
        let m = logistic_model("logistic/zero", ThetaTruth::Constant { value: 0.0 });
        let truth = generate_truth(&m, 150.0, 0.5).unwrap();
        assert_eq!(truth.times.len(), 301);
        for x in truth.states.iter() {
            assert!((9.99..=10.01).contains(x));
        }
    }

    #[test]
    fn oscillator_unforced_decays() {
        let mut m = crate::models::oscillator_model(
            "osc",
            ThetaTruth::Constant { value: 2.0 },
            false,
            false,
        );
        m.ode = std::sync::Arc::new(crate::models::OscillatorModel {
            damping: 5.0,
            mass: 1.0,
            stiffness: crate::models::Slot::Bound(ThetaTruth::Constant { value: 2.0 }),
            forcing: crate::models::Slot::Bound(ThetaTruth::Constant { value: 0.0 }),
        });
        let truth = generate_truth(&m, 50.0, 0.5).unwrap();
        let norms: Vec<f64> = truth.states.row_iter().map(|r| r.norm()).collect();
        // After the initial transient the norm decreases monotonically.
        for w in norms[4..].windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(*norms.last().unwrap() < 1e-3);
    }

    #[test]
    fn single_record_interval() {
        let m = benchmark("logistic/linear").unwrap();
        let truth = generate_truth(&m, 2.0, 2.0).unwrap();
        assert_eq!(truth.times, vec![0.0, 2.0]);
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let m = benchmark("oscillator/k-cos").unwrap();
        let truth = generate_truth(&m, 50.0, 0.5).unwrap();
        let obs = corrupt(&truth, 0.0, &DMatrix::identity(2, 2), 3).unwrap();
        assert_eq!(obs.len(), 100);
        assert_eq!(obs.times[0], 0.5);
        assert_eq!(obs.values, obs.truth_states);
    }

    #[test]
    fn constant_state_gets_no_noise() {
        let m = logistic_model("logistic/zero", ThetaTruth::Constant { value: 0.0 });
        let mut truth = generate_truth(&m, 10.0, 0.5).unwrap();
        truth.states.fill(10.0);
        let obs = corrupt(&truth, 0.2, &DMatrix::identity(1, 1), 3).unwrap();
        assert_eq!(obs.noise_std, vec![0.0]);
        assert!(obs.values.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn noise_scale_and_shape() {
        let m = benchmark("logistic/sinusoid").unwrap();
        let truth = generate_truth(&m, 150.0, 0.5).unwrap();
        let obs = corrupt(&truth, 0.2, &DMatrix::identity(1, 1), 11).unwrap();
        assert_eq!(obs.len(), 300);
        let target = 0.2 * population_std(obs.truth_states.column(0).iter());
        assert!((obs.noise_std[0] - target).abs() < 1e-12);

        let resid: Vec<f64> = (0..obs.len())
            .map(|j| obs.values[(j, 0)] - obs.truth_states[(j, 0)])
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let sd = population_std(resid.iter());
        assert!((sd / target - 1.0).abs() < 0.1, "sd {sd} target {target}");
        assert!(mean.abs() < 3.0 * target / n.sqrt());
        let skew = resid.iter().map(|r| ((r - mean) / sd).powi(3)).sum::<f64>() / n;
        let kurt = resid.iter().map(|r| ((r - mean) / sd).powi(4)).sum::<f64>() / n - 3.0;
        assert!(skew.abs() < 0.3, "skew {skew}");
        assert!(kurt.abs() < 0.6, "kurtosis {kurt}");
    }

    #[test]
    fn truth_is_seed_independent_and_noise_is_seeded() {
        let m = benchmark("logistic/multi-step").unwrap();
        let a = generate_truth(&m, 20.0, 0.5).unwrap();
        let b = generate_truth(&m, 20.0, 0.5).unwrap();
        assert_eq!(a, b);
        let g = DMatrix::identity(1, 1);
        assert_eq!(corrupt(&a, 0.2, &g, 1).unwrap(), corrupt(&a, 0.2, &g, 1).unwrap());
        assert_ne!(corrupt(&a, 0.2, &g, 1).unwrap(), corrupt(&a, 0.2, &g, 2).unwrap());
    }

    #[test]
    fn dataset_files_round_trip() {
        let m = benchmark("oscillator/k-and-q").unwrap();
        let truth = generate_truth(&m, 5.0, 0.5).unwrap();
        let obs = corrupt(&truth, 0.2, &DMatrix::identity(2, 2), 4).unwrap();
        let meta = DatasetMeta::new(&m, &obs, 5.0, 0.5, 0.2, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&path, &obs, &meta).unwrap();
        let (back, back_meta) = read_dataset(&path).unwrap();
        assert_eq!(back, obs);
        assert_eq!(back_meta, meta);
    }
}
