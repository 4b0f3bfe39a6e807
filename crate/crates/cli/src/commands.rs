use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pftvp_core::datagen::{
    corrupt, generate_truth, read_dataset, write_dataset, DatasetMeta, ObservationSet,
};
use pftvp_core::filters::{run_filter, StepRecord};
use pftvp_core::models::BenchmarkModel;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::records::{read_records, write_records, RecordsFile, RecordsHeader, RECORDS_SCHEMA};
use crate::summary::{RunLabel, RunSummary};
use crate::table::Table;
use crate::CliError;

pub const DATA_FILE: &str = "data.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPLICATE_FILE: &str = "replicate.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Model and observations ready for filtering.
#[derive(Clone)]
pub struct Dataset {
    pub model: BenchmarkModel,
    pub observations: ObservationSet,
    pub meta: DatasetMeta,
}

/// Generate the synthetic dataset described by `cfg` with its data seed.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    synthesize_with_seed(cfg, cfg.data.seed)
}

pub fn synthesize_with_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    let model = cfg.model()?;
    let g = cfg.obs_matrix(&model)?;
    let truth = generate_truth(&model, cfg.data.t_end, cfg.data.dt_obs)?;
    let observations = corrupt(&truth, cfg.data.noise_fraction, &g, seed)?;
    let meta = DatasetMeta::new(
        &model,
        &observations,
        cfg.data.t_end,
        cfg.data.dt_obs,
        cfg.data.noise_fraction,
        seed,
    );
    Ok(Dataset {
        model,
        observations,
        meta,
    })
}

/// Write `data.csv` and its sidecar into `out_dir`.
pub fn cmd_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf, CliError> {
    let data = synthesize(cfg)?;
    create_dir(out_dir)?;
    let path = out_dir.join(DATA_FILE);
    write_dataset(&path, &data.observations, &data.meta)?;
    Ok(path)
}

/// Read a dataset and check that it was generated for `cfg`'s model.
pub fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset, CliError> {
    let (observations, meta) = read_dataset(path)?;
    let model = cfg.model()?;
    if meta.model != model.id {
        return Err(CliError::Config(format!(
            "dataset {} was generated for model {}, config expects {}",
            path.display(),
            meta.model,
            model.id
        )));
    }
    if meta.truth != model.truth {
        return Err(CliError::Config(format!(
            "dataset {} has different true parameter trajectories than the config",
            path.display()
        )));
    }
    if observations.obs_matrix != cfg.obs_matrix(&model)? {
        return Err(CliError::Config(format!(
            "dataset {} observes different state components than the config",
            path.display()
        )));
    }
    Ok(Dataset {
        model,
        observations,
        meta,
    })
}

pub struct RunOutput {
    pub records: RecordsFile,
    pub summary: RunSummary,
}

/// Run the configured filter on `data` with filter seed `seed`.
pub fn execute(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<RunOutput, CliError> {
    let mut fc = cfg.filter_config(&data.model)?;
    fc.seed = seed;
    let start = Instant::now();
    let records: Vec<StepRecord> = run_filter(&data.model, &data.observations, &fc)?;
    let wall = start.elapsed().as_secs_f64();
    let label = RunLabel {
        name: cfg.name.clone(),
        model: cfg.model.clone(),
        filter: cfg.filter.kind,
        seed,
        sigma_e: cfg.fixed_sigma_e(),
    };
    let obs = &data.observations;
    let summary = RunSummary::compute(
        &label,
        &records,
        &obs.truth_states,
        &obs.truth_theta,
        cfg.summary.burn_in,
        wall,
    );
    let header = RecordsHeader {
        schema: RECORDS_SCHEMA.to_string(),
        label,
        dim_state: data.model.dim_state(),
        dim_param: data.model.dim_param(),
        dim_drift: records.first().map_or(0, |r| r.sigma_mean.len()),
        theta_roles: data.model.theta_roles.clone(),
        burn_in: cfg.summary.burn_in,
    };
    Ok(RunOutput {
        records: RecordsFile {
            header,
            records,
            truth_states: obs.truth_states.clone(),
            truth_theta: obs.truth_theta.clone(),
        },
        summary,
    })
}

fn write_run(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    write_records(&dir.join(RECORDS_FILE), &out.records)?;
    write_json(&dir.join(SUMMARY_FILE), &out.summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Filter the dataset at `data_path`, writing records and summary to `out_dir`.
pub fn cmd_run(
    cfg: &ExperimentConfig,
    data_path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<RunOutput, CliError> {
    let data = load_dataset(cfg, data_path)?;
    let out = execute(cfg, &data, seed.unwrap_or(cfg.filter.seed))?;
    write_run(&out, out_dir)?;
    Ok(out)
}

/// Metrics of one replicate, without timing so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub seed: u64,
    pub data_seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub name: String,
    pub model: String,
    pub vary_data: bool,
    pub runs: Vec<ReplicateRow>,
    pub aggregate: BTreeMap<String, Spread>,
}

pub fn spread(values: &[f64]) -> Spread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Spread {
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Run filter seeds `seed + 0 .. seed + n_seeds - 1`.
///
/// All replicates share one dataset (from `data_path`, or generated into
/// `out_dir`) unless `vary_data` is set, in which case replicate `i` also
/// shifts the data seed by `i`.
pub fn cmd_replicate(
    cfg: &ExperimentConfig,
    n_seeds: usize,
    data_path: Option<&Path>,
    vary_data: bool,
    out_dir: &Path,
) -> Result<(ReplicateReport, Vec<RunSummary>), CliError> {
    if n_seeds == 0 {
        return Err(CliError::Config("replicate needs at least one seed".into()));
    }
    create_dir(out_dir)?;
    let shared = if vary_data {
        None
    } else {
        Some(match data_path {
            Some(p) => load_dataset(cfg, p)?,
            None => {
                let data = synthesize(cfg)?;
                write_dataset(&out_dir.join(DATA_FILE), &data.observations, &data.meta)?;
                data
            }
        })
    };
    let mut runs = Vec::with_capacity(n_seeds);
    let mut summaries = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds as u64 {
        let seed = cfg.filter.seed + i;
        let dir = out_dir.join(format!("seed-{seed}"));
        let owned;
        let data = match &shared {
            Some(d) => d,
            None => {
                owned = synthesize_with_seed(cfg, cfg.data.seed + i)?;
                create_dir(&dir)?;
                write_dataset(&dir.join(DATA_FILE), &owned.observations, &owned.meta)?;
                &owned
            }
        };
        let out = execute(cfg, data, seed)?;
        write_run(&out, &dir)?;
        log::info!(
            "{} seed {seed}: theta rmse {:?}, {:.2}s",
            cfg.name,
            out.summary.theta_rmse,
            out.summary.wall_time_s
        );
        runs.push(ReplicateRow {
            seed,
            data_seed: data.meta.seed,
            metrics: out.summary.metrics().into_iter().collect(),
        });
        summaries.push(out.summary);
    }
    let mut aggregate = BTreeMap::new();
    for key in runs[0].metrics.keys() {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.metrics.get(key).copied()).collect();
        aggregate.insert(key.clone(), spread(&vals));
    }
    let report = ReplicateReport {
        name: cfg.name.clone(),
        model: cfg.model.clone(),
        vary_data,
        runs,
        aggregate,
    };
    write_json(&out_dir.join(REPLICATE_FILE), &report)?;
    Ok((report, summaries))
}

/// Comparison table over records files, ordered by fixed drift constant
/// (estimated-drift runs last), then name and seed. Groups of runs sharing
/// a name get mean and std rows.
pub fn cmd_summarize(files: &[PathBuf]) -> Result<Table, CliError> {
    if files.is_empty() {
        return Err(CliError::Config("summarize needs at least one records file".into()));
    }
    let mut summaries = Vec::with_capacity(files.len());
    for f in files {
        let rf = read_records(f)?;
        summaries.push(RunSummary::compute(
            &rf.header.label,
            &rf.records,
            &rf.truth_states,
            &rf.truth_theta,
            rf.header.burn_in,
            0.0,
        ));
    }
    summaries.sort_by(|a, b| {
        let key = |s: &RunSummary| s.sigma_e.unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    Ok(Table::from_summaries(&summaries))
}
