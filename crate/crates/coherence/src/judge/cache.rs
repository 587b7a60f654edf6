//! Content-addressed judgment cache: an append-only JSON-lines file plus an
//! in-memory map. A prompt-version or judge-model bump invalidates entries
//! by key construction, never by deletion, so reruns stay reproducible.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::judge::parse::parse_judgment;
use crate::judge::JudgeError;
use crate::model::{ErrorTag, Judgment, JudgmentStatus};

/// Digest of (prompt_version, judge_model, problem text, response text).
/// Equal inputs produce equal keys; any field change produces a new key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(
        prompt_version: &str,
        judge_model: &str,
        problem_text: &str,
        response_text: &str,
    ) -> CacheKey {
        // JSON-encode the tuple so field boundaries can never be confused
        let payload = serde_json::to_vec(&[prompt_version, judge_model, problem_text, response_text])
            .expect("strings serialize");
        let digest = Sha256::digest(&payload);
        CacheKey(hex::encode(digest))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_hex(hex_digest: impl Into<String>) -> CacheKey {
        CacheKey(hex_digest.into())
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One cache line. `raw_json` is authoritative for the judgment body; the
/// stored status/tags record what the original run concluded.
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    judge_model: String,
    prompt_version: String,
    raw_json: String,
    status: JudgmentStatus,
    tags: Vec<ErrorTag>,
    timestamp: u64,
    #[serde(default)]
    retry_count: u32,
}

impl CacheRecord {
    fn from_judgment(key: &CacheKey, judgment: &Judgment) -> CacheRecord {
        CacheRecord {
            key: key.as_str().to_string(),
            judge_model: judgment.judge_model.clone(),
            prompt_version: judgment.prompt_version.clone(),
            raw_json: judgment.raw_json.clone(),
            status: judgment.status,
            tags: judgment.tags.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            retry_count: judgment.retry_count,
        }
    }

    fn into_judgment(self) -> Judgment {
        let mut judgment = parse_judgment(&self.raw_json);
        judgment.judge_model = self.judge_model;
        judgment.prompt_version = self.prompt_version;
        judgment.retry_count = self.retry_count;
        // the original run's conclusion wins over a re-parse
        judgment.status = self.status;
        judgment.tags = self.tags;
        judgment
    }
}

struct CacheState {
    ready: HashMap<String, Judgment>,
    pending: HashSet<String>,
    file: Option<File>,
}

/// Thread-safe judgment store. `get_or_compute` guarantees one computation
/// per key even under concurrent requests for the same key.
pub struct JudgmentCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
    computed: Condvar,
}

impl JudgmentCache {
    /// Volatile cache with no backing file.
    pub fn in_memory() -> JudgmentCache {
        JudgmentCache {
            path: None,
            state: Mutex::new(CacheState {
                ready: HashMap::new(),
                pending: HashSet::new(),
                file: None,
            }),
            computed: Condvar::new(),
        }
    }

    /// Open (or create) a JSONL-backed cache. Existing lines are loaded with
    /// last-write-wins per key; corrupt lines are skipped.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<JudgmentCache> {
        let path = path.as_ref().to_path_buf();
        let mut ready = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                if let Ok(record) = serde_json::from_str::<CacheRecord>(&line) {
                    ready.insert(record.key.clone(), record.into_judgment());
                }
            }
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JudgmentCache {
            path: Some(path),
            state: Mutex::new(CacheState {
                ready,
                pending: HashSet::new(),
                file: Some(file),
            }),
            computed: Condvar::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").ready.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<Judgment> {
        self.state
            .lock()
            .expect("cache lock")
            .ready
            .get(key.as_str())
            .cloned()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.state
            .lock()
            .expect("cache lock")
            .ready
            .contains_key(key.as_str())
    }

    pub fn insert(&self, key: &CacheKey, judgment: Judgment) {
        let mut state = self.state.lock().expect("cache lock");
        Self::store(&mut state, key, judgment);
    }

    /// Return the cached judgment for `key`, or run `compute` exactly once
    /// to produce and store it. Concurrent callers for the same key wait for
    /// the winner instead of issuing duplicate work. Errors are not cached.
    pub fn get_or_compute<F>(&self, key: &CacheKey, compute: F) -> Result<Judgment, JudgeError>
    where
        F: FnOnce() -> Result<Judgment, JudgeError>,
    {
        {
            let mut state = self.state.lock().expect("cache lock");
            loop {
                if let Some(found) = state.ready.get(key.as_str()) {
                    return Ok(found.clone());
                }
                if state.pending.insert(key.as_str().to_string()) {
                    break;
                }
                state = self.computed.wait(state).expect("cache lock");
            }
        }

        let result = compute();

        let mut state = self.state.lock().expect("cache lock");
        state.pending.remove(key.as_str());
        match result {
            Ok(judgment) => {
                Self::store(&mut state, key, judgment.clone());
                self.computed.notify_all();
                Ok(judgment)
            }
            Err(err) => {
                self.computed.notify_all();
                Err(err)
            }
        }
    }

    fn store(state: &mut CacheState, key: &CacheKey, judgment: Judgment) {
        // appends are serialized by the state lock
        if let Some(file) = state.file.as_mut() {
            let record = CacheRecord::from_judgment(key, &judgment);
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            let _ = file.write_all(line.as_bytes());
            let _ = file.flush();
        }
        state.ready.insert(key.as_str().to_string(), judgment);
    }
}
