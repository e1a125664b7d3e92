use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub framework_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub workers: usize,
    pub cells: Vec<CellEntry>,
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellEntry {
    pub strategy: String,
    pub seed: u64,
    #[serde(flatten)]
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct Outputs {
    pub results: PathBuf,
    pub manifest: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events_dir: Option<PathBuf>,
}
