use std::path::PathBuf;

use fairlens::audit::{
    counterfactual_flips, disadvantaged_region, near_binary_fraction, pairwise_disagreement, probe_awareness, reconstruct_fair,
    recover_unconstrained, region_indices, AwarenessCurve, CounterfactualReport, ErrorEntry, ReconstructionResult, RegionReport, RuleData,
    Section,
};
use fairlens::fairness::CombinedClassifier;
use fairlens::persist::load_model;
use fairlens::{Dataset, Network, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodName};
use crate::error::{CliError, CliResult};
use crate::io::{read_json, write_csv_rows, write_json};
use crate::sweep::{completed, load_dataset, model_path, plan, scores_path, Rule, RunReport, RunScores, RunSpec};

pub const AUDIT_DIR: &str = "audit";
pub const EMBEDDINGS_DIR: &str = "embeddings";

/// Methods that get an audit report.
pub fn audited(method: MethodName) -> bool {
    matches!(method, MethodName::RegSquared | MethodName::RegAbs | MethodName::Massaging | MethodName::TwoHead)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionEntry {
    pub param: f64,
    /// The fair model's decisions as a rule over the two-head outputs.
    pub fair_from_heads: Section<ReconstructionResult>,
    /// The unconstrained model's decisions from the fair logits and `g`.
    pub unconstrained_from_fair: Section<ReconstructionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualEntry {
    /// `λ`, flip fraction or DDP bound, depending on the method.
    pub param: f64,
    /// `(a1, a2)` of the rule whose decisions are swapped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<CombinedClassifier>,
    pub report: Section<CounterfactualReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub param: f64,
    /// Dataset row indices, all from the test split.
    pub region: Section<RegionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: MethodName,
    pub seed: u64,
    pub awareness: Section<AwarenessCurve>,
    pub reconstruction: Section<Vec<ReconstructionEntry>>,
    /// Mean pairwise test disagreement among the unconstrained models of all seeds.
    pub reseed_baseline: Section<f64>,
    pub counterfactual: Section<Vec<CounterfactualEntry>>,
    pub region: Section<Vec<RegionEntry>>,
}

pub fn report_file(method: MethodName, seed: u64) -> PathBuf {
    PathBuf::from(AUDIT_DIR).join(format!("{method}-s{seed}.json"))
}

fn failed<T>(kind: &str, message: impl Into<String>) -> Section<T> {
    Section::Failed {
        error: ErrorEntry {
            kind: kind.into(),
            message: message.into(),
        },
    }
}

fn from_cli<T>(r: CliResult<T>) -> Section<T> {
    match r {
        Ok(v) => Section::Value(v),
        Err(CliError::Core(e)) => Err(e).into(),
        Err(CliError::Dependency(m)) => failed("dependency", m),
        Err(other) => failed("io", other.to_string()),
    }
}

/// A run's stored network and scores.
struct Stored {
    param: f64,
    network: Network,
    scores: RunScores,
}

struct Inputs<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a Dataset,
    reports: &'a [RunReport],
}

impl Inputs<'_> {
    fn load(&self, spec: &RunSpec) -> CliResult<Stored> {
        let missing = |what: &str| CliError::Dependency(format!("run `{}` has no {what}", spec.id()));
        if !self.reports.iter().any(|r| r.run_id == spec.id()) {
            return Err(missing("completed report"));
        }
        let out = &self.cfg.output_dir;
        let (network, _) = load_model(out.join(model_path(spec))).map_err(|_| missing("model"))?;
        let scores: RunScores = read_json(&out.join(scores_path(spec))).map_err(|_| missing("scores"))?;
        Ok(Stored {
            param: spec.param.unwrap_or(0.0),
            network,
            scores,
        })
    }

    fn runs_of(&self, method: MethodName, seed: u64) -> Vec<RunSpec> {
        plan(self.cfg).into_iter().filter(|r| r.method == method && r.seed == seed).collect()
    }

    fn two_head(&self, seed: u64) -> CliResult<Stored> {
        if !self.cfg.has(MethodName::TwoHead) {
            return Err(CliError::Dependency("the sweep has no two_head runs".into()));
        }
        self.load(&RunSpec {
            method: MethodName::TwoHead,
            param: None,
            seed,
        })
    }

    fn reseed(&self) -> CliResult<f64> {
        let decisions = self
            .cfg
            .seeds
            .iter()
            .map(|&s| Ok(self.load(&RunSpec::unconstrained(s))?.scores.test.decisions()))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(pairwise_disagreement(&decisions)?)
    }
}

fn reconstruct_one(fair: &Stored, heads: &Stored, plain: &Stored, baseline: Option<f64>) -> ReconstructionEntry {
    let with = |r: fairlens::Result<ReconstructionResult>| match (r, baseline) {
        (Ok(v), Some(b)) => Ok(v.with_baseline(1.0 - b)),
        (r, _) => r,
    };
    let fair_from_heads = with(reconstruct_fair(
        &heads.scores.validation,
        &fair.scores.validation.decisions(),
        &heads.scores.test,
        &fair.scores.test.decisions(),
    ));
    let unconstrained = || -> fairlens::Result<ReconstructionResult> {
        let gv = heads.scores.validation.require_g()?;
        let gt = heads.scores.test.require_g()?;
        let (tv, tt) = (plain.scores.validation.decisions(), plain.scores.test.decisions());
        recover_unconstrained(
            RuleData {
                score: &fair.scores.validation.f,
                g: gv,
                target: &tv,
            },
            RuleData {
                score: &fair.scores.test.f,
                g: gt,
                target: &tt,
            },
        )
    };
    ReconstructionEntry {
        param: fair.param,
        fair_from_heads: fair_from_heads.into(),
        unconstrained_from_fair: with(unconstrained()).into(),
    }
}

fn to_rows(indices: Vec<usize>, rows: &[usize]) -> Vec<usize> {
    indices.into_iter().map(|k| rows[k]).collect()
}

fn flips_and_region(heads: &Stored, s_test: &[u8], param: f64, rule: &CombinedClassifier) -> (CounterfactualEntry, RegionEntry) {
    let test = &heads.scores.test;
    let g = test.g.as_deref().unwrap_or(&[]);
    let report = counterfactual_flips(&test.f, g, s_test, rule).into();
    let region = RegionReport {
        indices: to_rows(region_indices(&test.f, rule.a1, rule.a2), &test.indices),
        near_binary_fraction: near_binary_fraction(g),
    };
    (
        CounterfactualEntry {
            param,
            rule: Some(rule.clone()),
            report,
        },
        RegionEntry {
            param,
            region: Section::Value(region),
        },
    )
}

fn audit_fair_method(inputs: &Inputs<'_>, method: MethodName, seed: u64, baseline: &Section<f64>) -> AuditReport {
    let ds = inputs.ds;
    let stored: Vec<CliResult<Stored>> = inputs.runs_of(method, seed).iter().map(|r| inputs.load(r)).collect();
    let loaded: Vec<&Stored> = stored.iter().filter_map(|s| s.as_ref().ok()).collect();
    let awareness = {
        let models: Vec<(f64, &Network)> = loaded.iter().map(|s| (s.param, &s.network)).collect();
        probe_awareness(&models, ds).into()
    };
    let heads = inputs.two_head(seed);
    let plain = inputs.load(&RunSpec::unconstrained(seed));
    let s_test = ds.protected_of(Split::Test);
    let (reconstruction, counterfactual, region) = match (&heads, &plain) {
        (Ok(heads), Ok(plain)) => {
            let mut recs = Vec::new();
            let mut flips = Vec::new();
            let mut regions = Vec::new();
            for (spec, st) in inputs.runs_of(method, seed).iter().zip(&stored) {
                let param = spec.param.unwrap_or(0.0);
                let fair = match st {
                    Ok(f) => f,
                    Err(e) => {
                        let entry = from_cli::<ReconstructionResult>(Err(CliError::Dependency(e.to_string())));
                        recs.push(ReconstructionEntry {
                            param,
                            fair_from_heads: entry.clone(),
                            unconstrained_from_fair: entry,
                        });
                        continue;
                    }
                };
                let entry = reconstruct_one(fair, heads, plain, baseline.value().copied());
                match entry.fair_from_heads.value() {
                    Some(rec) => {
                        let (a1, a2) = rec.as_combination();
                        let rule = CombinedClassifier { a1, a2, constraint: 0.0 };
                        let test = &heads.scores.test;
                        let g = test.g.as_deref().unwrap_or(&[]);
                        flips.push(CounterfactualEntry {
                            param,
                            rule: Some(rule.clone()),
                            report: counterfactual_flips(&test.f, g, &s_test, &rule).into(),
                        });
                        let region = disadvantaged_region(&test.f, g, rec).map(|r| RegionReport {
                            indices: to_rows(r.indices, &test.indices),
                            ..r
                        });
                        regions.push(RegionEntry {
                            param,
                            region: region.into(),
                        });
                    }
                    None => {
                        let Section::Failed { error } = &entry.fair_from_heads else { unreachable!() };
                        flips.push(CounterfactualEntry {
                            param,
                            rule: None,
                            report: Section::Failed { error: error.clone() },
                        });
                        regions.push(RegionEntry {
                            param,
                            region: Section::Failed { error: error.clone() },
                        });
                    }
                }
                recs.push(entry);
            }
            (Section::Value(recs), Section::Value(flips), Section::Value(regions))
        }
        (Err(e), _) | (_, Err(e)) => {
            let msg = e.to_string();
            (failed("dependency", &msg), failed("dependency", &msg), failed("dependency", msg))
        }
    };
    AuditReport {
        method,
        seed,
        awareness,
        reconstruction,
        reseed_baseline: baseline.clone(),
        counterfactual,
        region,
    }
}

fn not_applicable<T>(what: &str) -> Section<T> {
    failed("not_applicable", format!("{what} applies to models trained with a fairness weight"))
}

fn audit_two_head(inputs: &Inputs<'_>, seed: u64, baseline: &Section<f64>) -> AuditReport {
    let heads = inputs.two_head(seed);
    let report = inputs
        .reports
        .iter()
        .find(|r| r.method == MethodName::TwoHead && r.seed == seed)
        .ok_or_else(|| CliError::Dependency(format!("run `two_head-s{seed}` has no completed report")));
    let s_test = inputs.ds.protected_of(Split::Test);
    let (counterfactual, region) = match (heads, report) {
        (Ok(heads), Ok(report)) => {
            let mut flips = Vec::new();
            let mut regions = Vec::new();
            for entry in &report.entries {
                match &entry.rule {
                    Some(Rule::Combined(rule)) => {
                        let (f, r) = flips_and_region(&heads, &s_test, entry.lambda_or_bound, rule);
                        flips.push(f);
                        regions.push(r);
                    }
                    _ => {
                        let error = entry.error.clone().unwrap_or(ErrorEntry {
                            kind: "dependency".into(),
                            message: "entry has no combined rule".into(),
                        });
                        flips.push(CounterfactualEntry {
                            param: entry.lambda_or_bound,
                            rule: None,
                            report: Section::Failed { error: error.clone() },
                        });
                        regions.push(RegionEntry {
                            param: entry.lambda_or_bound,
                            region: Section::Failed { error },
                        });
                    }
                }
            }
            (Section::Value(flips), Section::Value(regions))
        }
        (Err(e), _) | (_, Err(e)) => {
            let msg = e.to_string();
            (failed("dependency", &msg), failed("dependency", msg))
        }
    };
    AuditReport {
        method: MethodName::TwoHead,
        seed,
        awareness: not_applicable("awareness"),
        reconstruction: not_applicable("reconstruction"),
        reseed_baseline: baseline.clone(),
        counterfactual,
        region,
    }
}

/// Writes last-layer test activations with row index, `s` and `y`.
fn export_embeddings(inputs: &Inputs<'_>, spec: &RunSpec) -> CliResult<PathBuf> {
    let stored = inputs.load(spec)?;
    let z = stored.network.last_layer(inputs.ds, Split::Test)?;
    let rows = inputs.ds.indices(Split::Test);
    let (s, y) = (inputs.ds.protected(), inputs.ds.targets());
    let mut header = vec!["row".to_string(), "s".into(), "y".into()];
    header.extend((0..z.ncols()).map(|c| format!("z{c}")));
    let mut records = vec![header];
    for (r, &i) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string(), s[i].to_string(), y[i].to_string()];
        rec.extend(z.row(r).iter().map(|v| v.to_string()));
        records.push(rec);
    }
    let path = PathBuf::from(EMBEDDINGS_DIR).join(format!("{}.csv", spec.id()));
    write_csv_rows(&inputs.cfg.output_dir.join(&path), records)?;
    Ok(path)
}

/// Runs whose embeddings are exported: per embedding seed, the unconstrained
/// model, the two-head model and the extreme settings of each swept method.
pub fn embedding_runs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let runs = plan(cfg);
    let mut picked = Vec::new();
    for seed in cfg.embedding_seeds() {
        picked.push(RunSpec::unconstrained(seed));
        for &method in &cfg.methods {
            let mine: Vec<&RunSpec> = runs.iter().filter(|r| r.method == method && r.seed == seed).collect();
            match method {
                MethodName::TwoHead => picked.extend(mine.first().copied()),
                MethodName::RegSquared | MethodName::RegAbs | MethodName::Massaging => {
                    let by = |a: &&&RunSpec, b: &&&RunSpec| a.param.unwrap_or(0.0).total_cmp(&b.param.unwrap_or(0.0));
                    let lo = mine.iter().min_by(by).copied();
                    let hi = mine.iter().max_by(by).copied();
                    picked.extend(lo);
                    picked.extend(hi.filter(|h| Some(*h) != lo));
                }
                _ => {}
            }
        }
    }
    picked
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditSummary {
    pub reports: Vec<PathBuf>,
    pub embeddings: Vec<PathBuf>,
}

/// Audits every fair method and seed from stored sweep artifacts.
pub fn audit(cfg: &ExperimentConfig, jobs: usize) -> CliResult<AuditSummary> {
    let reports = completed(cfg, plan(cfg))?;
    let ds = load_dataset(cfg)?;
    let inputs = Inputs {
        cfg,
        ds: &ds,
        reports: &reports,
    };
    let baseline = from_cli(inputs.reseed());
    let jobs_list: Vec<(MethodName, u64)> = cfg
        .methods
        .iter()
        .filter(|m| audited(**m))
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let written = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(method, seed)| {
                let report = match method {
                    MethodName::TwoHead => audit_two_head(&inputs, seed, &baseline),
                    _ => audit_fair_method(&inputs, method, seed, &baseline),
                };
                let path = report_file(method, seed);
                write_json(&cfg.output_dir.join(&path), &report)?;
                Ok(path)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut embeddings = Vec::new();
    for spec in embedding_runs(cfg) {
        match export_embeddings(&inputs, &spec) {
            Ok(p) => embeddings.push(p),
            // A failed run has nothing to export.
            Err(CliError::Dependency(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(AuditSummary {
        reports: written,
        embeddings,
    })
}
