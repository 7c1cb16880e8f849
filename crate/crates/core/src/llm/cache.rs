use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    #[serde(default)]
    pub usage_estimated: bool,
}

/// One file of the replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: CachedResponse,
}

/// Content-addressed request/response store laid out as
/// `<root>/<first two hex chars>/<key>.json`.
///
/// Reads take no lock. Writes go through a temp file and a rename; equal keys
/// carry equal payloads so concurrent writers cannot disagree.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ReplayCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ReplayCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedEntry>, LlmError> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CachedEntry =
            serde_json::from_str(&text).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        if entry.key != key {
            return Err(LlmError::Cache(format!("{} holds key {}", path.display(), entry.key)));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CachedEntry) -> Result<(), LlmError> {
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("cache path has a shard directory");
        let io = |e: std::io::Error| LlmError::Cache(format!("{}: {e}", path.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            entry.key,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut body = serde_json::to_string_pretty(entry).map_err(|e| LlmError::Cache(e.to_string()))?;
        body.push('\n');
        let mut file = std::fs::File::create(&tmp).map_err(io)?;
        file.write_all(body.as_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        drop(file);
        std::fs::rename(&tmp, &path).map_err(io)
    }

    /// Every entry currently stored, in no particular order.
    pub fn entries(&self) -> Result<Vec<CachedEntry>, LlmError> {
        let mut out = Vec::new();
        let shards = match std::fs::read_dir(&self.root) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(LlmError::Cache(e.to_string())),
        };
        for shard in shards.flatten() {
            let Ok(files) = std::fs::read_dir(shard.path()) else {
                continue;
            };
            for file in files.flatten() {
                let name = file.file_name().to_string_lossy().into_owned();
                if let Some(key) = name.strip_suffix(".json") {
                    if let Some(entry) = self.get(key)? {
                        out.push(entry);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{cache_key, ChatMessage};
    use super::*;

    #[test]
    fn put_then_get_round_trips_under_sharded_path() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let request = ChatRequest::new("m", vec![ChatMessage::user("q")]);
        let key = cache_key(&request);
        assert!(cache.get(&key).unwrap().is_none());
        let entry = CachedEntry {
            key: key.clone(),
            request,
            response: CachedResponse {
                content: "SELECT 1".into(),
                prompt_tokens: 5,
                completion_tokens: 2,
                latency_ms: 120,
                usage_estimated: false,
            },
        };
        cache.put(&entry).unwrap();
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).is_file());
        assert_eq!(cache.get(&key).unwrap(), Some(entry.clone()));
        // Rewriting identical content is harmless.
        cache.put(&entry).unwrap();
        assert_eq!(cache.entries().unwrap(), vec![entry]);
    }

    #[test]
    fn corrupt_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let path = cache.path_for("abcdef");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(cache.get("abcdef"), Err(LlmError::Cache(_))));
    }
}
