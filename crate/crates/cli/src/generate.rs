use std::path::PathBuf;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::io::{write_atomic, write_json};

pub const DATASET_CSV: &str = "data/dataset.csv";
pub const SPEC_JSON: &str = "data/spec.json";

/// Writes the synthetic dataset and an echo of its spec.
pub fn generate(cfg: &ExperimentConfig) -> CliResult<(PathBuf, PathBuf)> {
    let DatasetSource::Synthetic(spec) = &cfg.dataset else {
        return Err(CliError::Config("`generate` needs a synthetic dataset".into()));
    };
    let ds = fairlens::generate(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    ds.write_csv(&mut w)?;
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    let (csv_path, spec_path) = (cfg.output_dir.join(DATASET_CSV), cfg.output_dir.join(SPEC_JSON));
    write_atomic(&csv_path, &bytes)?;
    write_json(&spec_path, spec)?;
    Ok((csv_path, spec_path))
}
