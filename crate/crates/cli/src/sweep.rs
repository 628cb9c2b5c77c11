use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fairlens::audit::ErrorEntry;
use fairlens::fairness::{combine_grid_search, evaluate, lipton_thresholds, massage, CombinedClassifier, FairnessReport, GroupThresholds, MassagingPlan};
use fairlens::nn::{Method, Network, Scores};
use fairlens::persist::{load_model, save_model};
use fairlens::{train, Dataset, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, DatasetSource, ExperimentConfig, MethodName};
use crate::error::{CliError, CliResult};
use crate::io::{read_json, write_csv_rows, write_json};
use crate::manifest::{now, RunEntry, RunManifest, RunStatus, TOOL_VERSION};

pub const TRADEOFF_CSV: &str = "tradeoff.csv";

/// One unit of work: a method at one hyperparameter and seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub method: MethodName,
    /// `λ` for the regularizers, the flip fraction for massaging.
    pub param: Option<f64>,
    pub seed: u64,
}

impl RunSpec {
    pub fn unconstrained(seed: u64) -> Self {
        Self {
            method: MethodName::Unconstrained,
            param: None,
            seed,
        }
    }

    pub fn id(&self) -> String {
        match self.param {
            Some(p) => format!("{}-{p}-s{}", self.method, self.seed),
            None => format!("{}-s{}", self.method, self.seed),
        }
    }

    pub fn dir(&self) -> PathBuf {
        PathBuf::from("runs").join(self.id())
    }

    fn needs_reference(&self) -> bool {
        matches!(self.method, MethodName::Massaging | MethodName::TwoHead | MethodName::Lipton)
    }

    fn trains(&self) -> bool {
        self.method != MethodName::Lipton
    }
}

/// Every run implied by the config, in output order. Unconstrained runs are
/// always planned because the other methods are measured against them.
pub fn plan(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut runs: Vec<RunSpec> = cfg.seeds.iter().map(|&s| RunSpec::unconstrained(s)).collect();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let params: Vec<Option<f64>> = match method {
                MethodName::Unconstrained => continue,
                MethodName::RegSquared | MethodName::RegAbs => cfg.lambda_grid.iter().map(|&l| Some(l)).collect(),
                MethodName::Massaging => cfg.massaging_grid.iter().map(|&l| Some(l)).collect(),
                MethodName::TwoHead | MethodName::Lipton => vec![None],
            };
            runs.extend(params.into_iter().map(|param| RunSpec { method, param, seed }));
        }
    }
    runs
}

/// A planned run's report, in the order tables and curves list them.
pub fn reported_runs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let runs = plan(cfg);
    let mut ordered = Vec::with_capacity(runs.len());
    for &method in &cfg.methods {
        ordered.extend(runs.iter().filter(|r| r.method == method));
    }
    ordered
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// `1(f > 0)`.
    Threshold,
    Combined(CombinedClassifier),
    Group(GroupThresholds),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub lambda_or_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<FairnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<FairnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub method: MethodName,
    pub seed: u64,
    pub param: Option<f64>,
    /// Validation `|DDP|` of the unconstrained reference, for bound-based methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_ddp: Option<f64>,
    /// Test accuracy of `1(g > 0.5)` for the protected attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_head_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub massaging: Option<MassagingPlan>,
    pub entries: Vec<Entry>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub validation: Scores,
    pub test: Scores,
}

pub fn report_path(spec: &RunSpec) -> PathBuf {
    spec.dir().join("report.json")
}

pub fn scores_path(spec: &RunSpec) -> PathBuf {
    spec.dir().join("scores.json")
}

pub fn model_path(spec: &RunSpec) -> PathBuf {
    spec.dir().join("model.json")
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let ds = match &cfg.dataset {
        DatasetSource::Synthetic(spec) => fairlens::generate(spec),
        DatasetSource::Csv(src) => fairlens::load_csv(src),
    }
    .map_err(|e| CliError::Config(format!("dataset: {e}")))?;
    ds.check_splits(false).map_err(|e| CliError::Config(format!("dataset: {e}")))?;
    Ok(ds)
}

fn dataset_fingerprint(cfg: &ExperimentConfig) -> CliResult<String> {
    Ok(match &cfg.dataset {
        DatasetSource::Synthetic(spec) => serde_json::to_string(spec)?,
        DatasetSource::Csv(src) => {
            let bytes = std::fs::read(&src.path)?;
            format!(
                "{}|{}|{}|{:?}|{}",
                hex(&Sha256::digest(&bytes)),
                src.target_col,
                src.protected_col,
                src.split_col,
                src.split_seed
            )
        }
    })
}

/// Hash of everything a run's outputs depend on.
fn run_key(cfg: &ExperimentConfig, fingerprint: &str, spec: &RunSpec) -> String {
    let mut parts = vec![
        TOOL_VERSION.to_string(),
        fingerprint.to_string(),
        serde_json::to_string(&cfg.training).expect("settings serialize"),
        spec.id(),
    ];
    if spec.method.uses_bounds() {
        parts.push(serde_json::to_string(&cfg.ddp_bounds).expect("bounds serialize"));
    }
    if spec.needs_reference() {
        parts.push(run_key(cfg, fingerprint, &RunSpec::unconstrained(spec.seed)));
    }
    hex(&Sha256::digest(parts.join("\n").as_bytes()))
}

fn error_entry(e: &CliError) -> ErrorEntry {
    match e {
        CliError::Core(inner) => ErrorEntry {
            kind: inner.kind().into(),
            message: inner.to_string(),
        },
        CliError::Dependency(m) => ErrorEntry {
            kind: "dependency".into(),
            message: m.clone(),
        },
        other => ErrorEntry {
            kind: "io".into(),
            message: other.to_string(),
        },
    }
}

fn report_for(ds: &Dataset, split: Split, predictions: &[u8]) -> CliResult<FairnessReport> {
    Ok(evaluate(predictions, &ds.targets_of(split), &ds.protected_of(split), split)?)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a Dataset,
    out: &'a Path,
}

impl Context<'_> {
    fn reference(&self, seed: u64) -> CliResult<(RunReport, RunScores)> {
        let spec = RunSpec::unconstrained(seed);
        let missing = |_| CliError::Dependency(format!("run `{}` has no usable outputs", spec.id()));
        let report: RunReport = read_json(&self.out.join(report_path(&spec))).map_err(missing)?;
        let scores: RunScores = read_json(&self.out.join(scores_path(&spec))).map_err(missing)?;
        Ok((report, scores))
    }

    fn reference_ddp(report: &RunReport) -> CliResult<f64> {
        report
            .entries
            .first()
            .and_then(|e| e.validation.as_ref())
            .map(|r| r.ddp.abs())
            .ok_or_else(|| CliError::Dependency(format!("run `{}` lacks a validation report", report.run_id)))
    }

    fn save_network(&self, spec: &RunSpec, net: &Network, cfg: &fairlens::TrainConfig) -> CliResult<RunScores> {
        std::fs::create_dir_all(self.out.join(spec.dir()))?;
        let tmp = self.out.join(model_path(spec)).with_extension("json.partial");
        save_model(net, Some(cfg), &tmp)?;
        std::fs::rename(&tmp, self.out.join(model_path(spec)))?;
        let scores = RunScores {
            validation: net.score(self.ds, Split::Validation)?,
            test: net.score(self.ds, Split::Test)?,
        };
        write_json(&self.out.join(scores_path(spec)), &scores)?;
        Ok(scores)
    }

    fn threshold_entry(&self, param: f64, scores: &RunScores) -> CliResult<Entry> {
        Ok(Entry {
            lambda_or_bound: param,
            rule: Some(Rule::Threshold),
            validation: Some(report_for(self.ds, Split::Validation, &scores.validation.decisions())?),
            test: Some(report_for(self.ds, Split::Test, &scores.test.decisions())?),
            error: None,
        })
    }

    /// Executes one run and returns the files it wrote.
    fn execute(&self, spec: &RunSpec) -> CliResult<Vec<PathBuf>> {
        let settings = &self.cfg.training;
        let mut report = RunReport {
            run_id: spec.id(),
            method: spec.method,
            seed: spec.seed,
            param: spec.param,
            reference_ddp: None,
            group_head_accuracy: None,
            massaging: None,
            entries: Vec::new(),
        };
        match spec.method {
            MethodName::Unconstrained | MethodName::RegSquared | MethodName::RegAbs => {
                let method = match spec.method {
                    MethodName::RegSquared => Method::RegSquared,
                    MethodName::RegAbs => Method::RegAbs,
                    _ => Method::Unconstrained,
                };
                let lambda = spec.param.unwrap_or(0.0);
                let tc = settings.train_config(method, lambda, spec.seed);
                let net = train(self.ds, &tc)?;
                let scores = self.save_network(spec, &net, &tc)?;
                report.entries.push(self.threshold_entry(lambda, &scores)?);
            }
            MethodName::Massaging => {
                let frac = spec.param.unwrap_or(0.0);
                let reference = RunSpec::unconstrained(spec.seed);
                let (base, _) = load_model(self.out.join(model_path(&reference)))
                    .map_err(|_| CliError::Dependency(format!("run `{}` has no model", reference.id())))?;
                let train_scores = base.score(self.ds, Split::Train)?;
                let (massaged, plan) = massage(self.ds, &train_scores, frac)?;
                let tc = settings.train_config(Method::Unconstrained, 0.0, spec.seed);
                let net = train(&massaged, &tc)?;
                let scores = self.save_network(spec, &net, &tc)?;
                report.entries.push(self.threshold_entry(frac, &scores)?);
                report.massaging = Some(plan);
            }
            MethodName::TwoHead => {
                let (reference, _) = self.reference(spec.seed)?;
                let reference_ddp = Self::reference_ddp(&reference)?;
                let tc = settings.train_config(Method::TwoHead, 0.0, spec.seed);
                let net = train(self.ds, &tc)?;
                let scores = self.save_network(spec, &net, &tc)?;
                let s_val = self.ds.protected_of(Split::Validation);
                let y_val = self.ds.targets_of(Split::Validation);
                let g_val = scores.validation.require_g()?;
                let g_test = scores.test.require_g()?;
                let s_test = self.ds.protected_of(Split::Test);
                let hits = g_test.iter().zip(&s_test).filter(|(&g, &s)| u8::from(g > 0.5) == s).count();
                report.group_head_accuracy = Some(hits as f64 / s_test.len() as f64);
                report.reference_ddp = Some(reference_ddp);
                for bound in self.cfg.ddp_bounds.resolve(reference_ddp) {
                    let entry = match combine_grid_search(&scores.validation.f, g_val, &s_val, &y_val, bound) {
                        Ok(c) => Entry {
                            lambda_or_bound: bound,
                            validation: Some(report_for(self.ds, Split::Validation, &c.predict(&scores.validation.f, g_val))?),
                            test: Some(report_for(self.ds, Split::Test, &c.predict(&scores.test.f, g_test))?),
                            rule: Some(Rule::Combined(c)),
                            error: None,
                        },
                        Err(e) => Entry {
                            lambda_or_bound: bound,
                            rule: None,
                            validation: None,
                            test: None,
                            error: Some(error_entry(&CliError::Core(e))),
                        },
                    };
                    report.entries.push(entry);
                }
            }
            MethodName::Lipton => {
                let (reference, scores) = self.reference(spec.seed)?;
                let reference_ddp = Self::reference_ddp(&reference)?;
                report.reference_ddp = Some(reference_ddp);
                let s_val = self.ds.protected_of(Split::Validation);
                let y_val = self.ds.targets_of(Split::Validation);
                let s_test = self.ds.protected_of(Split::Test);
                for bound in self.cfg.ddp_bounds.resolve(reference_ddp) {
                    let t = lipton_thresholds(&scores.validation.f, &s_val, &y_val, bound)?;
                    report.entries.push(Entry {
                        lambda_or_bound: bound,
                        validation: Some(report_for(self.ds, Split::Validation, &t.predict(&scores.validation.f, &s_val))?),
                        test: Some(report_for(self.ds, Split::Test, &t.predict(&scores.test.f, &s_test))?),
                        rule: Some(Rule::Group(t)),
                        error: None,
                    });
                }
            }
        }
        write_json(&self.out.join(report_path(spec)), &report)?;
        let mut files = vec![report_path(spec)];
        if spec.trains() {
            files.push(model_path(spec));
            files.push(scores_path(spec));
        }
        Ok(files)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    /// Ids of the runs executed by this invocation, in plan order.
    pub executed: Vec<String>,
    pub reused: usize,
    /// Failed runs plus failed bound entries.
    pub failures: usize,
}

fn execute_stage(ctx: &Context<'_>, stage: &[RunSpec], keys: &[String], manifest: &Mutex<RunManifest>) -> CliResult<Vec<String>> {
    let todo: Vec<(RunSpec, String)> = {
        let m = manifest.lock().expect("manifest lock");
        stage
            .iter()
            .zip(keys)
            .filter(|(spec, key)| m.reusable(ctx.out, &spec.id(), key).is_none())
            .map(|(s, k)| (*s, k.clone()))
            .collect()
    };
    let results: Vec<CliResult<String>> = todo
        .par_iter()
        .map(|(spec, key)| {
            let outcome = ctx.execute(spec);
            let entry = match &outcome {
                Ok(files) => RunEntry {
                    key: key.clone(),
                    status: RunStatus::Ok,
                    files: files.iter().map(|f| f.to_string_lossy().replace('\\', "/")).collect(),
                    error: None,
                    completed_at: now(),
                },
                Err(e) => RunEntry {
                    key: key.clone(),
                    status: RunStatus::Failed,
                    files: Vec::new(),
                    error: Some(error_entry(e)),
                    completed_at: now(),
                },
            };
            if let Err(CliError::Io(e)) = outcome {
                return Err(CliError::Io(e));
            }
            let mut m = manifest.lock().expect("manifest lock");
            m.runs.insert(spec.id(), entry);
            m.save(ctx.out)?;
            Ok(spec.id())
        })
        .collect();
    results.into_iter().collect()
}

/// Trains and evaluates every planned run not already recorded, then writes
/// `tradeoff.csv`. With `resume` an output directory left by a different
/// config is reused run by run; without it that is a config error.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize, resume: bool) -> CliResult<SweepSummary> {
    let ds = load_dataset(cfg)?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let mut manifest = match RunManifest::load(out)? {
        Some(m) if m.config_hash == hash || resume => m,
        Some(m) => {
            return Err(CliError::Config(format!(
                "{} holds runs for another config (hash {}); use a fresh output_dir or pass --resume",
                out.display(),
                m.config_hash
            )))
        }
        None => RunManifest::new(hash.clone()),
    };
    manifest.config_hash = hash;
    manifest.tool_version = TOOL_VERSION.to_string();
    manifest.save(out)?;
    cfg.write_resolved()?;

    let fingerprint = dataset_fingerprint(cfg)?;
    let runs = plan(cfg);
    let keys: Vec<String> = runs.iter().map(|r| run_key(cfg, &fingerprint, r)).collect();
    let ctx = Context { cfg, ds: &ds, out };
    let manifest = Mutex::new(manifest);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;

    let split = cfg.seeds.len();
    let mut executed = pool.install(|| execute_stage(&ctx, &runs[..split], &keys[..split], &manifest))?;
    executed.extend(pool.install(|| execute_stage(&ctx, &runs[split..], &keys[split..], &manifest))?);
    let order: Vec<String> = runs.iter().map(RunSpec::id).collect();
    executed.sort_by_key(|id| order.iter().position(|o| o == id));

    let manifest = manifest.into_inner().expect("manifest lock");
    let mut failures = 0;
    for spec in &runs {
        match manifest.runs.get(&spec.id()) {
            Some(e) if e.status == RunStatus::Ok => {
                let report: RunReport = read_json(&out.join(report_path(spec)))?;
                failures += report.failures();
            }
            _ => failures += 1,
        }
    }
    write_tradeoff(cfg)?;
    Ok(SweepSummary {
        reused: runs.len() - executed.len(),
        executed,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: MethodName,
    pub lambda_or_bound: f64,
    pub accuracy: f64,
    pub ddp: f64,
    pub split: String,
    pub seed: u64,
}

/// Reports of every reported run that completed; failed runs are skipped.
pub fn completed_reports(cfg: &ExperimentConfig) -> CliResult<Vec<RunReport>> {
    completed(cfg, reported_runs(cfg))
}

/// Like [`completed_reports`], over a chosen set of planned runs.
pub fn completed(cfg: &ExperimentConfig, runs: Vec<RunSpec>) -> CliResult<Vec<RunReport>> {
    let out = cfg.output_dir.as_path();
    let manifest = RunManifest::load(out)?.ok_or_else(|| CliError::Dependency(format!("no manifest in {}; run `sweep` first", out.display())))?;
    let mut reports = Vec::new();
    for spec in runs {
        match manifest.runs.get(&spec.id()) {
            None => return Err(CliError::Dependency(format!("run `{}` is missing; run `sweep` first", spec.id()))),
            Some(e) if e.status == RunStatus::Failed => continue,
            Some(_) => {
                let path = out.join(report_path(&spec));
                let report: RunReport =
                    read_json(&path).map_err(|_| CliError::Dependency(format!("run `{}` lacks {}", spec.id(), path.display())))?;
                reports.push(report);
            }
        }
    }
    Ok(reports)
}

pub fn tradeoff_rows(reports: &[RunReport]) -> Vec<TradeoffRow> {
    let mut rows = Vec::new();
    for report in reports {
        for entry in &report.entries {
            for r in [&entry.validation, &entry.test].into_iter().flatten() {
                rows.push(TradeoffRow {
                    method: report.method,
                    lambda_or_bound: entry.lambda_or_bound,
                    accuracy: r.accuracy,
                    ddp: r.ddp,
                    split: r.split.as_str().to_string(),
                    seed: report.seed,
                });
            }
        }
    }
    rows
}

pub fn write_tradeoff(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let rows = tradeoff_rows(&completed_reports(cfg)?);
    let path = cfg.output_dir.join(TRADEOFF_CSV);
    write_csv_rows(&path, rows)?;
    Ok(path)
}
