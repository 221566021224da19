use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";

#[derive(Serialize, Deserialize)]
struct Entry {
    request_hash: String,
    request: Value,
    response: Value,
}

pub(crate) fn request_key(kind: &str, provider: &str, request: &Value) -> String {
    let canonical = serde_json::json!({ "kind": kind, "provider": provider, "request": request });
    let bytes = serde_json::to_vec(&canonical).expect("json serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Responses keyed by request hash, optionally persisted as JSON lines
/// `{request_hash, request, response}`.
pub struct TranscriptCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Value>>,
    writer: Mutex<Option<File>>,
}

impl TranscriptCache {
    pub fn in_memory() -> Self {
        TranscriptCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) `dir/transcripts.jsonl`. Unreadable lines
    /// are skipped with a warning.
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(TRANSCRIPT_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.request_hash, e.response);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), i + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(TranscriptCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub(crate) fn put(&self, key: String, request: Value, response: Value) {
        let mut writer = self.writer.lock().expect("cache lock");
        if let Some(f) = writer.as_mut() {
            let entry = Entry {
                request_hash: key.clone(),
                request,
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry).expect("entry serializes");
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("cache write failed: {e}");
            }
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(key, response);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{Gateway, LmRequest, ScriptedLm};

    #[test]
    fn replay_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let req = LmRequest::new("prompt").with_seed(Some(3));
        {
            let g = Gateway::new(ScriptedLm::new(["first"]))
                .with_cache(TranscriptCache::open(dir.path()).unwrap());
            assert_eq!(g.complete(&req).unwrap().text, "first");
            assert_eq!(g.stats().provider_calls, 1);
        }
        let g = Gateway::new(ScriptedLm::new(["second"]))
            .with_cache(TranscriptCache::open(dir.path()).unwrap());
        let r = g.complete(&req).unwrap();
        assert_eq!(r.text, "first");
        assert!(r.cached);
        let stats = g.stats();
        assert_eq!(
            (stats.complete_calls, stats.provider_calls, stats.cache_hits),
            (1, 0, 1)
        );
        // a different seed is a different request
        assert_eq!(
            g.complete(&LmRequest::new("prompt")).unwrap().text,
            "second"
        );
    }

    #[test]
    fn keys_depend_on_every_field() {
        let a = serde_json::to_value(LmRequest::new("p")).unwrap();
        let b = serde_json::to_value(LmRequest::new("p").with_stop(["x"])).unwrap();
        assert_ne!(
            request_key("complete", "m", &a),
            request_key("complete", "m", &b)
        );
        assert_ne!(
            request_key("complete", "m", &a),
            request_key("complete", "n", &a)
        );
        assert_eq!(request_key("complete", "m", &a).len(), 64);
    }
}
