//! Append-only trial store.
//!
//! One JSONL record per trial, a meta line first. Replaying the log
//! reconstructs the indexes exactly; records are never mutated. A torn final
//! line (crash mid-append) is dropped on replay; corruption anywhere else is
//! an error.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorClass, Result};
use crate::hash::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

/// Which comparative group a trial belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariantKey {
    /// Swap-audit variant with the correct content at slot k (1-based).
    Position { k: u32 },
    /// Ordering-sweep trial under the ordering with this lexicographic rank.
    Ordering { rank: u64 },
    /// Placement trial: tag is "front"/"middle"/"back" or "pos1".."posK";
    /// position is the 1-based index of the important content.
    Placement { tag: String, position: u32 },
}

impl VariantKey {
    /// Short stable form used for dedup keys and trial ids.
    pub fn short(&self) -> String {
        match self {
            VariantKey::Position { k } => format!("k{k}"),
            VariantKey::Ordering { rank } => format!("rank{rank}"),
            VariantKey::Placement { tag, .. } => tag.clone(),
        }
    }
}

/// One model response to one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub parent_id: String,
    pub key: VariantKey,
    /// Stable id of the trial's randomness stream (simulated models).
    pub trial_id: String,
    /// Digest of (model id, rendered prompt bytes, decoding params).
    pub cache_key: String,
    /// Option count of the answer space.
    pub m: u32,
    /// 1-based position of the correct label among the labels.
    pub correct_position: u32,
    /// Raw model text; None when the call failed terminally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    /// Parsed pick; None means unparseable (which implies correct = false).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pick: Option<String>,
    /// 1-based position of the pick among the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pick_position: Option<u32>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
    // Timing metadata: excluded from canonical comparisons.
    pub attempts: u32,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

impl TrialRecord {
    /// The record with timing metadata zeroed, for keyed store comparisons.
    pub fn essence(&self) -> TrialRecord {
        TrialRecord {
            attempts: 0,
            latency_ms: 0,
            cache_hit: false,
            ..self.clone()
        }
    }

    fn dedup_key(&self) -> (String, String) {
        (self.parent_id.clone(), self.key.short())
    }
}

/// Cached terminal outcome for one cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedOutcome {
    pub cache_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
}

/// Provenance line leading every artifact file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMeta {
    pub record: String,
    pub schema_version: u32,
    pub kind: String,
    pub config_digest: String,
    pub seed: u64,
}

impl FileMeta {
    pub fn new(kind: &str, config_digest: &str, seed: u64) -> Self {
        FileMeta {
            record: "meta".to_string(),
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            config_digest: config_digest.to_string(),
            seed,
        }
    }
}

/// Append-only record log with in-memory indexes.
pub struct TrialStore {
    meta: FileMeta,
    records: Vec<TrialRecord>,
    by_trial: HashMap<(String, String), usize>,
    by_cache: HashMap<String, usize>,
    log: Option<File>,
    path: Option<PathBuf>,
}

impl TrialStore {
    /// Storeless variant for library use and tests.
    pub fn in_memory(meta: FileMeta) -> Self {
        TrialStore {
            meta,
            records: Vec::new(),
            by_trial: HashMap::new(),
            by_cache: HashMap::new(),
            log: None,
            path: None,
        }
    }

    /// Open the log at `path`, replaying it if it exists, creating it (with
    /// the meta line) otherwise. An existing log must carry the same config
    /// digest; anything else risks silently mixing experiments.
    pub fn open_or_create(path: &Path, meta: FileMeta) -> Result<Self> {
        if path.exists() {
            let mut store = Self::load(path)?;
            if store.meta.config_digest != meta.config_digest {
                return Err(Error::Store(format!(
                    "existing store {} was written under config {}, current config is {}",
                    path.display(),
                    store.meta.config_digest,
                    meta.config_digest
                )));
            }
            store.log = Some(
                OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| io_err(path, e))?,
            );
            Ok(store)
        } else {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                }
            }
            let mut log = OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(path)
                .map_err(|e| io_err(path, e))?;
            let mut line = serde_json::to_string(&meta)?;
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
            log.flush().map_err(|e| io_err(path, e))?;
            Ok(TrialStore {
                meta,
                records: Vec::new(),
                by_trial: HashMap::new(),
                by_cache: HashMap::new(),
                log: Some(log),
                path: Some(path.to_path_buf()),
            })
        }
    }

    /// Read-only replay for scoring.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.is_empty() {
            return Err(Error::Store(format!("{} is empty", path.display())));
        }
        let meta: FileMeta = serde_json::from_str(lines[0])
            .map_err(|e| Error::Store(format!("{} has no meta line: {e}", path.display())))?;
        let mut store = TrialStore {
            meta,
            records: Vec::new(),
            by_trial: HashMap::new(),
            by_cache: HashMap::new(),
            log: None,
            path: Some(path.to_path_buf()),
        };
        let ends_with_newline = text.ends_with('\n');
        for (i, line) in lines[1..].iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TrialRecord>(line) {
                Ok(record) => store.index_record(record)?,
                // A torn final line means the process died mid-append.
                Err(_) if i + 2 == lines.len() && !ends_with_newline => break,
                Err(e) => {
                    return Err(Error::Store(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 2
                    )))
                }
            }
        }
        Ok(store)
    }

    fn index_record(&mut self, record: TrialRecord) -> Result<()> {
        let key = record.dedup_key();
        if self.by_trial.contains_key(&key) {
            return Err(Error::Store(format!(
                "duplicate trial record for parent {} key {}",
                key.0, key.1
            )));
        }
        if let Some(&prev) = self.by_cache.get(&record.cache_key) {
            if self.records[prev].raw_response != record.raw_response {
                return Err(Error::CacheConflict {
                    key: record.cache_key.clone(),
                });
            }
        }
        let idx = self.records.len();
        self.by_cache.entry(record.cache_key.clone()).or_insert(idx);
        self.by_trial.insert(key, idx);
        self.records.push(record);
        Ok(())
    }

    /// Append one record, writing it through to the log when one is open.
    pub fn append(&mut self, record: TrialRecord) -> Result<()> {
        let line = serde_json::to_string(&record)?;
        self.index_record(record)?;
        if let Some(log) = &mut self.log {
            let path = self.path.clone().unwrap_or_default();
            log.write_all(line.as_bytes())
                .and_then(|_| log.write_all(b"\n"))
                .and_then(|_| log.flush())
                .map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub fn meta(&self) -> &FileMeta {
        &self.meta
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_trial(&self, parent_id: &str, key: &VariantKey) -> bool {
        self.by_trial
            .contains_key(&(parent_id.to_string(), key.short()))
    }

    pub fn cached_response(&self, cache_key: &str) -> Option<&TrialRecord> {
        self.by_cache.get(cache_key).map(|&i| &self.records[i])
    }

    /// Records keyed by (parent, variant), timing metadata stripped.
    pub fn canonical(&self) -> BTreeMap<(String, String), TrialRecord> {
        self.records
            .iter()
            .map(|r| (r.dedup_key(), r.essence()))
            .collect()
    }

    /// Digest of the canonical record set; stable across append order.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        for (_, r) in self.canonical() {
            buf.extend_from_slice(serde_json::to_string(&r).expect("record to json").as_bytes());
            buf.push(b'\n');
        }
        sha256_hex(&buf)
    }

    /// Keyed equality modulo timing metadata.
    pub fn same_outcomes(&self, other: &TrialStore) -> bool {
        self.canonical() == other.canonical()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Append-only response cache keyed by cache key; survives across runs so a
/// warm rerun issues zero model calls.
pub struct ResponseCache {
    entries: HashMap<String, CachedOutcome>,
    log: Option<File>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn ephemeral() -> Self {
        ResponseCache {
            entries: HashMap::new(),
            log: None,
            path: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let ends_with_newline = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CachedOutcome>(line) {
                    Ok(outcome) => {
                        entries.insert(outcome.cache_key.clone(), outcome);
                    }
                    Err(_) if i + 1 == lines.len() && !ends_with_newline => break,
                    Err(e) => {
                        return Err(Error::Store(format!(
                            "{} line {}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(ResponseCache {
            entries,
            log: Some(log),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn get(&self, cache_key: &str) -> Option<&CachedOutcome> {
        self.entries.get(cache_key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn put(&mut self, outcome: CachedOutcome) -> Result<()> {
        if self.entries.contains_key(&outcome.cache_key) {
            return Ok(());
        }
        if let Some(log) = &mut self.log {
            let path = self.path.clone().unwrap_or_default();
            let line = serde_json::to_string(&outcome)?;
            log.write_all(line.as_bytes())
                .and_then(|_| log.write_all(b"\n"))
                .and_then(|_| log.flush())
                .map_err(|e| io_err(&path, e))?;
        }
        self.entries.insert(outcome.cache_key.clone(), outcome);
        Ok(())
    }
}

/// Write a whole file atomically: temp file in the same directory, then
/// rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(parent: &str, k: u32, pick: &str, correct: bool) -> TrialRecord {
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            parent_id: parent.to_string(),
            key: VariantKey::Position { k },
            trial_id: format!("{parent}::k{k}"),
            cache_key: format!("cache-{parent}-{k}"),
            m: 4,
            correct_position: k,
            raw_response: Some(pick.to_string()),
            pick: Some(pick.to_string()),
            pick_position: Some(1),
            correct,
            error_class: None,
            attempts: 1,
            latency_ms: 3,
            cache_hit: false,
        }
    }

    #[test]
    fn replay_reconstructs_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let meta = FileMeta::new("swap_audit", "cfg123", 7);
        let mut store = TrialStore::open_or_create(&path, meta.clone()).unwrap();
        for p in 0..3 {
            for k in 1..=4 {
                store.append(record(&format!("p{p}"), k, "A", k == 1)).unwrap();
            }
        }
        let replayed = TrialStore::load(&path).unwrap();
        assert_eq!(replayed.len(), 12);
        assert_eq!(replayed.meta(), &meta);
        assert!(replayed.has_trial("p1", &VariantKey::Position { k: 3 }));
        assert!(!replayed.has_trial("p9", &VariantKey::Position { k: 1 }));
        assert!(store.same_outcomes(&replayed));
        assert_eq!(store.digest(), replayed.digest());
    }

    #[test]
    fn duplicate_trial_rejected() {
        let meta = FileMeta::new("swap_audit", "cfg", 1);
        let mut store = TrialStore::in_memory(meta);
        store.append(record("p", 1, "A", true)).unwrap();
        assert!(store.append(record("p", 1, "B", false)).is_err());
    }

    #[test]
    fn conflicting_cache_key_rejected() {
        let meta = FileMeta::new("swap_audit", "cfg", 1);
        let mut store = TrialStore::in_memory(meta);
        store.append(record("p", 1, "A", true)).unwrap();
        let mut dup = record("q", 1, "B", false);
        dup.cache_key = "cache-p-1".to_string();
        match store.append(dup) {
            Err(Error::CacheConflict { key }) => assert_eq!(key, "cache-p-1"),
            other => panic!("expected cache conflict, got {other:?}"),
        }
        // Same cache key with the same response is fine.
        let mut ok = record("q", 2, "A", false);
        ok.cache_key = "cache-p-1".to_string();
        store.append(ok).unwrap();
    }

    #[test]
    fn torn_final_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let meta = FileMeta::new("swap_audit", "cfg", 1);
        let mut store = TrialStore::open_or_create(&path, meta).unwrap();
        store.append(record("p", 1, "A", true)).unwrap();
        store.append(record("p", 2, "A", false)).unwrap();
        drop(store);
        // Simulate a crash mid-append.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"schema_version\":1,\"parent_id\":\"p\",\"key\"");
        std::fs::write(&path, text).unwrap();
        let replayed = TrialStore::load(&path).unwrap();
        assert_eq!(replayed.len(), 2);
    }

    #[test]
    fn mid_file_corruption_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let meta = FileMeta::new("swap_audit", "cfg", 1);
        let mut store = TrialStore::open_or_create(&path, meta).unwrap();
        store.append(record("p", 1, "A", true)).unwrap();
        drop(store);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.insert_str(text.find('\n').unwrap() + 1, "garbage line\n");
        std::fs::write(&path, text).unwrap();
        assert!(TrialStore::load(&path).is_err());
    }

    #[test]
    fn config_digest_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        TrialStore::open_or_create(&path, FileMeta::new("swap_audit", "cfg-a", 1)).unwrap();
        let err =
            TrialStore::open_or_create(&path, FileMeta::new("swap_audit", "cfg-b", 1)).unwrap_err();
        assert!(err.to_string().contains("cfg-a"));
    }

    #[test]
    fn digest_independent_of_append_order() {
        let meta = FileMeta::new("swap_audit", "cfg", 1);
        let mut a = TrialStore::in_memory(meta.clone());
        let mut b = TrialStore::in_memory(meta);
        let r1 = record("p", 1, "A", true);
        let r2 = record("p", 2, "B", false);
        a.append(r1.clone()).unwrap();
        a.append(r2.clone()).unwrap();
        b.append(r2).unwrap();
        b.append(r1).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert!(a.same_outcomes(&b));
    }

    #[test]
    fn response_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("responses.jsonl");
        let mut cache = ResponseCache::open(&path).unwrap();
        cache
            .put(CachedOutcome {
                cache_key: "k1".into(),
                raw_response: Some("B".into()),
                error_class: None,
            })
            .unwrap();
        cache
            .put(CachedOutcome {
                cache_key: "k2".into(),
                raw_response: None,
                error_class: Some(ErrorClass::Timeout),
            })
            .unwrap();
        drop(cache);
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k1").unwrap().raw_response.as_deref(), Some("B"));
        assert_eq!(cache.get("k2").unwrap().error_class, Some(ErrorClass::Timeout));
    }

    #[test]
    fn write_atomic_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // No temp files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
