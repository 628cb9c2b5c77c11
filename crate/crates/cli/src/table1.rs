use std::path::PathBuf;

use fairlens::{FairnessReport, Split};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodName};
use crate::error::{CliError, CliResult};
use crate::io::{read_json, write_csv_rows};
use crate::sweep::{completed_reports, load_dataset, report_path, RunReport, RunSpec};

/// Literal failure marker in the table.
pub const FAILURE: &str = "X";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Param(f64),
    /// A constant all-0 or all-1 classifier, which two-head and group-threshold
    /// rules reach by saturating their offset.
    Constant(ConstantRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantRule {
    AllZero,
    AllOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub accuracy: f64,
    pub ddp: f64,
    pub setting: Setting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub method: MethodName,
    pub seed: u64,
    /// The bound the test `|DDP|` had to meet.
    pub threshold: f64,
    /// `None` marks a failure: no candidate met the bound.
    pub selection: Option<Selection>,
}

#[derive(Serialize)]
struct CsvRow {
    method: String,
    seed: String,
    accuracy: String,
    ddp: String,
    lambda_or_bound: String,
}

pub fn file_name(reduction: f64) -> String {
    format!("table1_r{}.csv", (reduction * 100.0).round() as u32)
}

pub fn check_reduction(reduction: f64) -> CliResult<()> {
    if reduction == 0.5 || reduction == 0.8 {
        Ok(())
    } else {
        Err(CliError::Config(format!("--reduction must be 0.5 or 0.8, got {reduction}")))
    }
}

/// Test accuracy of always predicting 0 and always predicting 1.
fn constant_candidates(y_test: &[u8]) -> [(f64, Setting); 2] {
    let ones = y_test.iter().filter(|&&y| y == 1).count() as f64 / y_test.len() as f64;
    [
        (1.0 - ones, Setting::Constant(ConstantRule::AllZero)),
        (ones, Setting::Constant(ConstantRule::AllOne)),
    ]
}

/// Most accurate candidate with `|test DDP| <= threshold`; ties keep the
/// earlier candidate.
pub fn select(reports: &[&RunReport], threshold: f64, constants: Option<&[(f64, Setting)]>) -> Option<Selection> {
    let mut best: Option<Selection> = None;
    let mut offer = |accuracy: f64, ddp: f64, setting: Setting| {
        if ddp.abs() <= threshold && best.as_ref().is_none_or(|b| accuracy > b.accuracy) {
            best = Some(Selection { accuracy, ddp, setting });
        }
    };
    for report in reports {
        for entry in &report.entries {
            if let Some(FairnessReport { accuracy, ddp, .. }) = entry.test {
                offer(accuracy, ddp, Setting::Param(entry.lambda_or_bound));
            }
        }
    }
    for &(accuracy, setting) in constants.unwrap_or(&[]) {
        offer(accuracy, 0.0, setting);
    }
    best
}

/// For each listed method and seed, the most accurate stored model whose
/// test `|DDP|` is at most `(1 - reduction)` times the unconstrained one.
pub fn table1(cfg: &ExperimentConfig, reduction: f64) -> CliResult<Vec<Table1Row>> {
    check_reduction(reduction)?;
    let reports = completed_reports(cfg)?;
    let ds = load_dataset(cfg)?;
    let constants = constant_candidates(&ds.targets_of(Split::Test));
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let reference = RunSpec::unconstrained(seed);
            let path = cfg.output_dir.join(report_path(&reference));
            let base: RunReport = read_json(&path)
                .map_err(|_| CliError::Dependency(format!("run `{}` lacks {}", reference.id(), path.display())))?;
            let base_ddp = base
                .entries
                .first()
                .and_then(|e| e.test.as_ref())
                .map(|r| r.ddp.abs())
                .ok_or_else(|| CliError::Dependency(format!("run `{}` has no test report", reference.id())))?;
            // With no disparity to reduce, every model qualifies.
            let threshold = if base_ddp == 0.0 { f64::INFINITY } else { (1.0 - reduction) * base_ddp };
            let own: Vec<&RunReport> = reports.iter().filter(|r| r.method == method && r.seed == seed).collect();
            let fallback = method.uses_bounds().then_some(&constants[..]);
            rows.push(Table1Row {
                method,
                seed,
                threshold,
                selection: select(&own, threshold, fallback),
            });
        }
    }
    Ok(rows)
}

fn csv_rows(rows: &[Table1Row], methods: &[MethodName]) -> Vec<CsvRow> {
    let mut out = Vec::new();
    for &method in methods {
        let mine: Vec<&Table1Row> = rows.iter().filter(|r| r.method == method).collect();
        for row in &mine {
            out.push(match &row.selection {
                Some(s) => CsvRow {
                    method: method.to_string(),
                    seed: row.seed.to_string(),
                    accuracy: s.accuracy.to_string(),
                    ddp: s.ddp.to_string(),
                    lambda_or_bound: match s.setting {
                        Setting::Param(p) => p.to_string(),
                        Setting::Constant(ConstantRule::AllZero) => "all_zero".into(),
                        Setting::Constant(ConstantRule::AllOne) => "all_one".into(),
                    },
                },
                None => CsvRow {
                    method: method.to_string(),
                    seed: row.seed.to_string(),
                    accuracy: FAILURE.into(),
                    ddp: FAILURE.into(),
                    lambda_or_bound: String::new(),
                },
            });
        }
        // A method fails overall if any seed fails.
        let picked: Option<Vec<&Selection>> = mine.iter().map(|r| r.selection.as_ref()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.push(match picked {
            Some(sel) if !sel.is_empty() => CsvRow {
                method: method.to_string(),
                seed: "mean".into(),
                accuracy: mean(&sel.iter().map(|s| s.accuracy).collect::<Vec<_>>()).to_string(),
                ddp: mean(&sel.iter().map(|s| s.ddp).collect::<Vec<_>>()).to_string(),
                lambda_or_bound: String::new(),
            },
            _ => CsvRow {
                method: method.to_string(),
                seed: "mean".into(),
                accuracy: FAILURE.into(),
                ddp: FAILURE.into(),
                lambda_or_bound: String::new(),
            },
        });
    }
    out
}

pub fn write_table1(cfg: &ExperimentConfig, reduction: f64) -> CliResult<PathBuf> {
    let rows = table1(cfg, reduction)?;
    let path = cfg.output_dir.join(file_name(reduction));
    write_csv_rows(&path, csv_rows(&rows, &cfg.methods))?;
    Ok(path)
}
