//! Run manifests and the content hash that ties artifacts to them.
//!
//! The hash covers what determines outputs: the pipeline configuration and
//! the bytes of the prompt fixtures, dataset, catalog and shot library. Paths,
//! timestamps, worker count and replay mode are left out, so a rerun over the
//! same inputs carries the same hash.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use sqlflow_core::llm::ReplayMode;
use sqlflow_core::prompt::TemplateId;
use sqlflow_core::workflow::PipelineConfig;

/// Git-style object id: SHA-256 over `"<kind> <len>\0"` followed by the bytes.
pub fn object_hash(kind: &str, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind} {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn blob_hash(bytes: &[u8]) -> String {
    object_hash("blob", bytes)
}

/// Tree hash over every compiled-in template, one `<blob> <id>` line each.
pub fn prompt_fixture_hash() -> String {
    let mut tree = String::new();
    for id in TemplateId::ALL {
        tree.push_str(&format!("{} {}\n", blob_hash(id.body().as_bytes()), id.as_str()));
    }
    object_hash("tree", tree.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigests {
    pub prompt_fixtures: String,
    pub dataset: String,
    pub catalog: String,
    pub library: Option<String>,
}

pub fn manifest_hash(pipeline: &PipelineConfig, inputs: &InputDigests) -> String {
    // serde_json maps are key-sorted, so this text is canonical.
    let doc = json!({ "pipeline": pipeline, "inputs": inputs });
    object_hash("manifest", doc.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub dataset: PathBuf,
    pub catalog: PathBuf,
    pub library: Option<PathBuf>,
    pub cache: PathBuf,
    pub predictions: PathBuf,
    pub traces: PathBuf,
    pub usage: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tasks: usize,
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
    pub with_fallbacks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systemic_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub tool_version: String,
    pub pipeline: PipelineConfig,
    pub replay: ReplayMode,
    pub workers: usize,
    pub endpoint: String,
    pub inputs: InputDigests,
    pub paths: RunPaths,
    pub started_at: String,
    pub finished_at: String,
    pub summary: RunSummary,
}
