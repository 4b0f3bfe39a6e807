//! Per-step records CSV.
//!
//! The first line is `#` followed by a JSON header; the CSV body has one row
//! per assimilated observation with posterior summaries next to the truth.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use pftvp_core::filters::{Bands, StepRecord};
use serde::{Deserialize, Serialize};

use crate::summary::RunLabel;
use crate::CliError;

pub const RECORDS_SCHEMA: &str = "pftvp.records/1";

const BAND_SUFFIXES: [&str; 5] = ["q025", "q16", "q50", "q84", "q975"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsHeader {
    pub schema: String,
    #[serde(flatten)]
    pub label: RunLabel,
    pub dim_state: usize,
    pub dim_param: usize,
    pub dim_drift: usize,
    pub theta_roles: Vec<String>,
    pub burn_in: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordsFile {
    pub header: RecordsHeader,
    pub records: Vec<StepRecord>,
    pub truth_states: DMatrix<f64>,
    pub truth_theta: DMatrix<f64>,
}

fn group_columns(prefix: &str, with_truth: bool) -> Vec<String> {
    let mut cols = vec![format!("{prefix}_mean"), format!("{prefix}_std")];
    cols.extend(BAND_SUFFIXES.iter().map(|s| format!("{prefix}_{s}")));
    if with_truth {
        cols.push(format!("{prefix}_true"));
    }
    cols
}

pub fn columns(d: usize, p: usize, q: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for i in 0..d {
        cols.extend(group_columns(&format!("x{i}"), true));
    }
    for i in 0..p {
        cols.extend(group_columns(&format!("theta{i}"), true));
    }
    for i in 0..q {
        cols.extend(group_columns(&format!("sigma{i}"), false));
    }
    cols.push("retention".into());
    cols.push("degenerate".into());
    cols
}

fn push_group(row: &mut Vec<String>, mean: f64, std: f64, b: &Bands, truth: Option<f64>) {
    for v in [mean, std, b.q025, b.q16, b.q50, b.q84, b.q975] {
        row.push(v.to_string());
    }
    if let Some(t) = truth {
        row.push(t.to_string());
    }
}

pub fn write_records(path: &Path, file: &RecordsFile) -> Result<(), CliError> {
    let h = &file.header;
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut out = fs::File::create(path).map_err(io)?;
    writeln!(out, "# {}", serde_json::to_string(h).expect("header serializes")).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(columns(h.dim_state, h.dim_param, h.dim_drift))
        .map_err(csv_err)?;
    for (j, r) in file.records.iter().enumerate() {
        let mut row = vec![r.t.to_string()];
        for i in 0..h.dim_state {
            let truth = file.truth_states[(j, i)];
            push_group(&mut row, r.state_mean[i], r.state_std[i], &r.state_bands[i], Some(truth));
        }
        for i in 0..h.dim_param {
            let truth = file.truth_theta[(j, i)];
            push_group(&mut row, r.theta_mean[i], r.theta_std[i], &r.theta_bands[i], Some(truth));
        }
        for i in 0..h.dim_drift {
            push_group(&mut row, r.sigma_mean[i], r.sigma_std[i], &r.sigma_bands[i], None);
        }
        row.push(r.retention.to_string());
        row.push((r.degenerate as u8).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn read_records(path: &Path) -> Result<RecordsFile, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| bad("missing records header line".into()))?;
    let header: RecordsHeader =
        serde_json::from_str(json.trim()).map_err(|e| bad(format!("records header: {e}")))?;
    if header.schema != RECORDS_SCHEMA {
        return Err(bad(format!(
            "schema {} is not {RECORDS_SCHEMA}",
            header.schema
        )));
    }
    let (d, p, q) = (header.dim_state, header.dim_param, header.dim_drift);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let cols: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if cols != columns(d, p, q) {
        return Err(bad("columns do not match the header dimensions".into()));
    }

    let mut records = Vec::new();
    let mut xs = Vec::new();
    let mut ths = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let mut it = vals.into_iter();
        let mut next = || it.next().expect("column count checked");
        let t = next();
        let group = |n: usize, truth: bool, next: &mut dyn FnMut() -> f64| {
            let mut means = Vec::new();
            let mut stds = Vec::new();
            let mut bands = Vec::new();
            let mut truths = Vec::new();
            for _ in 0..n {
                means.push(next());
                stds.push(next());
                bands.push(Bands {
                    q025: next(),
                    q16: next(),
                    q50: next(),
                    q84: next(),
                    q975: next(),
                });
                if truth {
                    truths.push(next());
                }
            }
            (means, stds, bands, truths)
        };
        let (state_mean, state_std, state_bands, x_true) = group(d, true, &mut next);
        let (theta_mean, theta_std, theta_bands, th_true) = group(p, true, &mut next);
        let (sigma_mean, sigma_std, sigma_bands, _) = group(q, false, &mut next);
        let retention = next();
        let degenerate = next() != 0.0;
        xs.extend(x_true);
        ths.extend(th_true);
        records.push(StepRecord {
            t,
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
        });
    }
    let n = records.len();
    Ok(RecordsFile {
        header,
        records,
        truth_states: DMatrix::from_row_slice(n, d, &xs),
        truth_theta: DMatrix::from_row_slice(n, p, &ths),
    })
}
