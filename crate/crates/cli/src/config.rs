use std::fmt;
use std::path::{Path, PathBuf};

use fairlens::nn::TrainConfig;
use fairlens::{CsvSource, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::write_atomic;

/// Environment variable that overrides `output_dir`.
pub const OUT_ENV: &str = "FAIRLENS_OUT";

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Unconstrained,
    RegSquared,
    RegAbs,
    Massaging,
    TwoHead,
    Lipton,
}

impl MethodName {
    pub const ALL: [MethodName; 6] = [
        MethodName::Unconstrained,
        MethodName::RegSquared,
        MethodName::RegAbs,
        MethodName::Massaging,
        MethodName::TwoHead,
        MethodName::Lipton,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Unconstrained => "unconstrained",
            MethodName::RegSquared => "reg_squared",
            MethodName::RegAbs => "reg_abs",
            MethodName::Massaging => "massaging",
            MethodName::TwoHead => "two_head",
            MethodName::Lipton => "lipton",
        }
    }

    /// Methods evaluated at every DDP bound from one trained model.
    pub fn uses_bounds(self) -> bool {
        matches!(self, MethodName::TwoHead | MethodName::Lipton)
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Either explicit bounds or a count of equidistant bounds between 0 and the
/// unconstrained model's validation `|DDP|`, both ends included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DdpBounds {
    Values(Vec<f64>),
    Equidistant { equidistant: usize },
}

impl Default for DdpBounds {
    fn default() -> Self {
        DdpBounds::Equidistant { equidistant: 20 }
    }
}

impl DdpBounds {
    pub fn resolve(&self, unconstrained_ddp: f64) -> Vec<f64> {
        match self {
            DdpBounds::Values(v) => v.clone(),
            DdpBounds::Equidistant { equidistant } => fairlens::fairness::equidistant_bounds(unconstrained_ddp, *equidistant),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_widths: Vec<usize>,
    pub lr_drop_patience: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            hidden_widths: d.hidden_widths,
            lr_drop_patience: d.lr_drop_patience,
        }
    }
}

impl TrainingSettings {
    pub fn train_config(&self, method: fairlens::Method, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            method,
            lambda,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            hidden_widths: self.hidden_widths.clone(),
            lr_drop_patience: self.lr_drop_patience,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    /// Seeds whose last-layer test embeddings are exported (first seed when absent).
    pub embedding_seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<MethodName>,
    pub lambda_grid: Vec<f64>,
    pub massaging_grid: Vec<f64>,
    pub ddp_bounds: DdpBounds,
    pub seeds: Vec<u64>,
    pub training: TrainingSettings,
    pub audit: AuditSettings,
    pub output_dir: PathBuf,
}

pub fn default_lambda_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 15.0, 20.0, 30.0]
}

pub fn default_massaging_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            methods: MethodName::ALL.to_vec(),
            lambda_grid: default_lambda_grid(),
            massaging_grid: default_massaging_grid(),
            ddp_bounds: DdpBounds::default(),
            seeds: (0..5).collect(),
            training: TrainingSettings::default(),
            audit: AuditSettings::default(),
            output_dir: PathBuf::from("fairlens-out"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn distinct<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, a)| !items[..i].contains(a))
}

impl ExperimentConfig {
    /// Reads a config file, applies the output override and validates it.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        } else if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        if let DatasetSource::Csv(src) = &mut cfg.dataset {
            if src.path.is_relative() {
                if let Some(parent) = path.parent() {
                    src.path = parent.join(&src.path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if self.methods.is_empty() || !distinct(&self.methods) {
            return Err(invalid("`methods` must be a nonempty list without repeats"));
        }
        if self.seeds.is_empty() || !distinct(&self.seeds) {
            return Err(invalid("`seeds` must be a nonempty list without repeats"));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || !distinct(&self.lambda_grid) {
            return Err(invalid("`lambda_grid` values must be finite, nonnegative and distinct"));
        }
        if self.massaging_grid.iter().any(|l| !(0.0..=1.0).contains(l)) || !distinct(&self.massaging_grid) {
            return Err(invalid("`massaging_grid` values must be distinct and lie in [0, 1]"));
        }
        match &self.ddp_bounds {
            DdpBounds::Values(v) if v.is_empty() || v.iter().any(|b| !(b.is_finite() && *b >= 0.0)) => {
                return Err(invalid("`ddp_bounds` must be nonempty, finite and nonnegative"));
            }
            DdpBounds::Equidistant { equidistant } if *equidistant < 2 => {
                return Err(invalid("`ddp_bounds.equidistant` must be at least 2"));
            }
            _ => {}
        }
        let cfg = self.training.train_config(fairlens::Method::Unconstrained, 0.0, 0);
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn has(&self, method: MethodName) -> bool {
        self.methods.contains(&method)
    }

    /// SHA-256 over the canonical JSON of everything except `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("object").remove("output_dir");
        hex(&Sha256::digest(serde_json::to_vec(&value).expect("value serializes")))
    }

    /// Writes the config with every default spelled out.
    pub fn write_resolved(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.output_dir)?;
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(&self.output_dir.join(RESOLVED_CONFIG), json.as_bytes())
    }

    pub fn embedding_seeds(&self) -> Vec<u64> {
        self.audit.embedding_seeds.clone().unwrap_or_else(|| vec![self.seeds[0]])
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
