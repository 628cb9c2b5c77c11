use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodName};
use crate::error::CliResult;
use crate::io::write_csv_rows;
use crate::sweep::{completed_reports, tradeoff_rows, RunReport, TRADEOFF_CSV};

pub const SUMMARY_CSV: &str = "tradeoff_summary.csv";

/// One point of a trade-off curve aggregated over seeds. Bound-based methods
/// use seed-specific bounds, so points are keyed by position in the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: MethodName,
    pub position: usize,
    pub split: String,
    pub n_seeds: usize,
    pub lambda_or_bound_mean: f64,
    pub accuracy_mean: f64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    pub ddp_mean: f64,
    pub ddp_min: f64,
    pub ddp_max: f64,
}

fn stats(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

pub fn summarize(methods: &[MethodName], reports: &[RunReport]) -> Vec<SummaryRow> {
    // (method, position, split) -> (param, accuracy, ddp) per seed
    let mut groups: BTreeMap<(usize, usize, String), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (m, &method) in methods.iter().enumerate() {
        let mut seeds: BTreeMap<u64, usize> = BTreeMap::new();
        for report in reports.iter().filter(|r| r.method == method) {
            for entry in &report.entries {
                let position = seeds.entry(report.seed).or_default();
                for r in [&entry.validation, &entry.test].into_iter().flatten() {
                    groups
                        .entry((m, *position, r.split.as_str().to_string()))
                        .or_default()
                        .push((entry.lambda_or_bound, r.accuracy, r.ddp));
                }
                *position += 1;
            }
        }
    }
    groups
        .into_iter()
        .map(|((m, position, split), points)| {
            let col = |k: usize| points.iter().map(|p| [p.0, p.1, p.2][k]).collect::<Vec<_>>();
            let (param, _, _) = stats(&col(0));
            let (am, amin, amax) = stats(&col(1));
            let (dm, dmin, dmax) = stats(&col(2));
            SummaryRow {
                method: methods[m],
                position,
                split,
                n_seeds: points.len(),
                lambda_or_bound_mean: param,
                accuracy_mean: am,
                accuracy_min: amin,
                accuracy_max: amax,
                ddp_mean: dm,
                ddp_min: dmin,
                ddp_max: dmax,
            }
        })
        .collect()
}

/// Rewrites `tradeoff.csv` from stored reports and adds a per-seed summary.
pub fn tradeoff_plot_data(cfg: &ExperimentConfig) -> CliResult<(PathBuf, PathBuf)> {
    let reports = completed_reports(cfg)?;
    let tradeoff = cfg.output_dir.join(TRADEOFF_CSV);
    write_csv_rows(&tradeoff, tradeoff_rows(&reports))?;
    let summary = cfg.output_dir.join(SUMMARY_CSV);
    write_csv_rows(&summary, summarize(&cfg.methods, &reports))?;
    Ok((tradeoff, summary))
}
