use std::path::Path;

use crate::commands::spread;
use crate::summary::RunSummary;
use crate::CliError;

const LABELS: [&str; 4] = ["name", "filter", "seed", "sigma_e"];

/// Comparison table; numeric cells use shortest round-trip formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_summaries(summaries: &[RunSummary]) -> Self {
        let mut metric_keys: Vec<String> = Vec::new();
        for s in summaries {
            for (k, _) in s.metrics() {
                if !metric_keys.contains(&k) {
                    metric_keys.push(k);
                }
            }
        }
        let values = |s: &RunSummary| -> Vec<Option<f64>> {
            let m = s.metrics();
            metric_keys
                .iter()
                .map(|k| m.iter().find(|(n, _)| n == k).map(|(_, v)| *v))
                .collect()
        };
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());

        let mut rows = Vec::new();
        let mut i = 0;
        while i < summaries.len() {
            let name = &summaries[i].name;
            let end = (i..summaries.len())
                .find(|&j| summaries[j].name != *name)
                .unwrap_or(summaries.len());
            let group = &summaries[i..end];
            for s in group {
                let mut row = vec![
                    s.name.clone(),
                    s.filter.as_str().to_string(),
                    s.seed.to_string(),
                    fmt(s.sigma_e),
                ];
                row.extend(values(s).into_iter().map(fmt));
                rows.push(row);
            }
            if group.len() > 1 {
                let cols: Vec<Vec<f64>> = (0..metric_keys.len())
                    .map(|c| group.iter().filter_map(|s| values(s)[c]).collect())
                    .collect();
                for (label, pick) in [("mean", 0usize), ("std", 1)] {
                    let mut row = vec![
                        format!("{name} {label}"),
                        group[0].filter.as_str().to_string(),
                        String::new(),
                        fmt(group[0].sigma_e),
                    ];
                    row.extend(cols.iter().map(|c| {
                        if c.is_empty() {
                            String::new()
                        } else {
                            let sp = spread(c);
                            [sp.mean, sp.std][pick].to_string()
                        }
                    }));
                    rows.push(row);
                }
            }
            i = end;
        }
        let mut header: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
        header.extend(metric_keys);
        Table { header, rows }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush()
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Columns padded to a common width, numbers shortened to 6 significant digits.
    pub fn to_text(&self) -> String {
        let short = |cell: &str| match cell.parse::<f64>() {
            Ok(v) if cell.contains('.') || cell.contains('e') => format!("{:.6}", v)
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
                .chars()
                .take(10)
                .collect(),
            _ => cell.to_string(),
        };
        let cells: Vec<Vec<String>> = std::iter::once(self.header.clone())
            .chain(self.rows.iter().map(|r| r.iter().map(|c| short(c)).collect()))
            .collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &cells {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
