use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fairlens::audit::ErrorEntry;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::io::{read_json, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    /// Hash of everything the run's outputs depend on.
    pub key: String,
    pub status: RunStatus,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEntry>,
    pub completed_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub created_at: u64,
    pub updated_at: u64,
    pub runs: BTreeMap<String, RunEntry>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        let t = now();
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash,
            created_at: t,
            updated_at: t,
            runs: BTreeMap::new(),
        }
    }

    pub fn load(out: &Path) -> CliResult<Option<Self>> {
        let path = out.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }

    pub fn save(&mut self, out: &Path) -> CliResult<()> {
        self.updated_at = now();
        write_json(&out.join(MANIFEST), self)
    }

    /// The entry for `id` if it was produced under `key` and its files are
    /// intact. Runs that failed on a missing dependency are retried.
    pub fn reusable(&self, out: &Path, id: &str, key: &str) -> Option<&RunEntry> {
        let entry = self.runs.get(id)?;
        let ok = match entry.status {
            RunStatus::Ok => entry.files.iter().all(|f| out.join(f).is_file()),
            RunStatus::Failed => entry.error.as_ref().is_none_or(|e| e.kind != "dependency"),
        };
        (entry.key == key && ok).then_some(entry)
    }
}
