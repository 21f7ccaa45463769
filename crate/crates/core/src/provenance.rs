//! Artifact hashing, run manifests, and replay verification.
//!
//! Every file the pipeline writes is registered here as a `sha256:` digest plus an
//! optional CSV row count. A run manifest splits into a stable section (config
//! snapshot, flags, artifact digests, run metadata) that must be byte-identical
//! across replays of the same inputs, and a volatile section (run id, wall-clock
//! timestamps) that is excluded from comparison.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::canonical_json_bytes;

/// SHA-256 of the empty byte string; useful as a sentinel in tests.
pub const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

#[derive(Debug, Error)]
pub enum ProvenanceError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("manifest serialization: {0}")]
    Canonical(String),
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Streaming SHA-256 of a reader.
pub fn sha256_reader<R: Read>(mut reader: R) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest record for one artifact file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    /// Data rows for CSV files (header excluded); `None` for other formats.
    #[serde(default)]
    pub row_count: Option<u64>,
}

/// Hash a file; CSV files additionally get a data-row count (header excluded).
pub fn hash_artifact(path: &Path) -> Result<ArtifactEntry, ProvenanceError> {
    let io = |source| ProvenanceError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io)?;
    let sha256 = sha256_reader(BufReader::new(file)).map_err(io)?;
    let row_count = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let file = File::open(path).map_err(io)?;
        let lines = BufReader::new(file).lines().count() as u64;
        Some(lines.saturating_sub(1))
    } else {
        None
    };
    Ok(ArtifactEntry { sha256, row_count })
}

/// Volatile per-run identifiers, excluded from replay comparison.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VolatileSection {
    pub run_id: String,
    pub created_utc: String,
}

/// Replay-stable manifest content.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StableSection {
    pub workspace_tag: String,
    /// Frozen snapshot of the run configuration.
    pub model_config: serde_json::Value,
    pub flags: BTreeMap<String, bool>,
    /// Artifact digests keyed by path relative to the output root.
    pub entries: BTreeMap<String, ArtifactEntry>,
    /// Run-level metadata: input hashes, seeds, per-stage summary values.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub stable: StableSection,
    pub volatile: VolatileSection,
}

impl RunManifest {
    pub fn new(workspace_tag: &str, model_config: serde_json::Value) -> Self {
        RunManifest {
            stable: StableSection {
                workspace_tag: workspace_tag.to_string(),
                model_config,
                ..StableSection::default()
            },
            volatile: VolatileSection::default(),
        }
    }

    /// Hash `file` and register it under its path relative to `root`.
    pub fn record_file(&mut self, root: &Path, file: &Path) -> Result<&ArtifactEntry, ProvenanceError> {
        let entry = hash_artifact(file)?;
        let key = file
            .strip_prefix(root)
            .unwrap_or(file)
            .to_string_lossy()
            .replace('\\', "/");
        Ok(self.stable.entries.entry(key).and_modify(|e| *e = entry.clone()).or_insert(entry))
    }

    pub fn set_flag(&mut self, name: &str, value: bool) {
        self.stable.flags.insert(name.to_string(), value);
    }

    pub fn set_meta(&mut self, key: &str, value: serde_json::Value) {
        self.stable.metadata.insert(key.to_string(), value);
    }

    /// Canonical bytes of the stable section only. Two replays of the same inputs
    /// must produce identical bytes here.
    pub fn stable_bytes(&self) -> Result<Vec<u8>, ProvenanceError> {
        let value = serde_json::to_value(&self.stable)?;
        canonical_json_bytes(&value).map_err(|e| ProvenanceError::Canonical(e.to_string()))
    }

    /// Write the manifest as canonical JSON (sorted keys, fixed number formatting).
    pub fn save(&self, path: &Path) -> Result<(), ProvenanceError> {
        let value = serde_json::to_value(self)?;
        let mut bytes = canonical_json_bytes(&value).map_err(|e| ProvenanceError::Canonical(e.to_string()))?;
        bytes.push(b'\n');
        let io = |source| ProvenanceError::Io { path: path.to_path_buf(), source };
        let mut f = File::create(path).map_err(io)?;
        f.write_all(&bytes).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ProvenanceError> {
        let io = |source| ProvenanceError::Io { path: path.to_path_buf(), source };
        let file = File::open(path).map_err(io)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Files under `root` that were never registered (closure check). The manifest
    /// file itself is exempt.
    pub fn unregistered_outputs(&self, root: &Path, manifest_name: &str) -> Vec<PathBuf> {
        let mut missing = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            let Ok(entries) = std::fs::read_dir(&dir) else { continue };
            for entry in entries.flatten() {
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                    if rel != manifest_name && !self.stable.entries.contains_key(&rel) {
                        missing.push(path);
                    }
                }
            }
        }
        missing.sort();
        missing
    }
}

/// One digest difference between two manifests.
#[derive(Debug, Clone, Serialize)]
pub struct DigestMismatch {
    pub key: String,
    pub left: String,
    pub right: String,
}

/// Outcome of comparing two run manifests, volatile fields excluded.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReplayReport {
    pub matched: Vec<String>,
    pub mismatched: Vec<DigestMismatch>,
    /// Entry keys present only in the left manifest.
    pub only_left: Vec<String>,
    /// Entry keys present only in the right manifest.
    pub only_right: Vec<String>,
}

impl ReplayReport {
    pub fn all_match(&self) -> bool {
        self.mismatched.is_empty() && self.only_left.is_empty() && self.only_right.is_empty()
    }
}

/// Compare the stable sections of two manifests: per-artifact digests, config
/// snapshot, flags, and metadata. Volatile fields (run id, timestamps) are never
/// consulted. Key-set differences are reported structurally rather than as digest
/// mismatches.
pub fn verify_replay(left: &RunManifest, right: &RunManifest) -> Result<ReplayReport, ProvenanceError> {
    let mut report = ReplayReport::default();

    for (key, le) in &left.stable.entries {
        match right.stable.entries.get(key) {
            None => report.only_left.push(key.clone()),
            Some(re) if re.sha256 == le.sha256 => report.matched.push(key.clone()),
            Some(re) => report.mismatched.push(DigestMismatch {
                key: key.clone(),
                left: le.sha256.clone(),
                right: re.sha256.clone(),
            }),
        }
    }
    for key in right.stable.entries.keys() {
        if !left.stable.entries.contains_key(key) {
            report.only_right.push(key.clone());
        }
    }

    let scalar_pairs = [
        ("workspace_tag", serde_json::Value::String(left.stable.workspace_tag.clone()), serde_json::Value::String(right.stable.workspace_tag.clone())),
        ("model_config", left.stable.model_config.clone(), right.stable.model_config.clone()),
        ("flags", serde_json::to_value(&left.stable.flags)?, serde_json::to_value(&right.stable.flags)?),
        ("metadata", serde_json::to_value(&left.stable.metadata)?, serde_json::to_value(&right.stable.metadata)?),
    ];
    for (name, lv, rv) in scalar_pairs {
        let lb = canonical_json_bytes(&lv).map_err(|e| ProvenanceError::Canonical(e.to_string()))?;
        let rb = canonical_json_bytes(&rv).map_err(|e| ProvenanceError::Canonical(e.to_string()))?;
        if lb == rb {
            report.matched.push(name.to_string());
        } else {
            report.mismatched.push(DigestMismatch {
                key: name.to_string(),
                left: sha256_hex(&lb),
                right: sha256_hex(&rb),
            });
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_hashes_to_known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        File::create(&path).unwrap();
        let entry = hash_artifact(&path).unwrap();
        assert_eq!(entry.sha256, EMPTY_SHA256);
        assert_eq!(entry.row_count, None);
    }

    #[test]
    fn csv_row_count_excludes_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "published_at,title,is_pad").unwrap();
        for i in 0..50 {
            writeln!(f, "{i},headline {i},0").unwrap();
        }
        drop(f);
        let entry = hash_artifact(&path).unwrap();
        assert_eq!(entry.row_count, Some(50));
    }

    #[test]
    fn one_byte_flip_changes_exactly_one_entry() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("a.bin"), b"alpha").unwrap();
        std::fs::write(root.join("b.bin"), b"beta").unwrap();

        let mut m1 = RunManifest::new("t", serde_json::json!({}));
        m1.record_file(root, &root.join("a.bin")).unwrap();
        m1.record_file(root, &root.join("b.bin")).unwrap();

        std::fs::write(root.join("b.bin"), b"betA").unwrap();
        let mut m2 = RunManifest::new("t", serde_json::json!({}));
        m2.record_file(root, &root.join("a.bin")).unwrap();
        m2.record_file(root, &root.join("b.bin")).unwrap();

        let report = verify_replay(&m1, &m2).unwrap();
        assert_eq!(report.mismatched.len(), 1);
        assert_eq!(report.mismatched[0].key, "b.bin");
        assert!(report.only_left.is_empty() && report.only_right.is_empty());
    }

    #[test]
    fn volatile_fields_do_not_affect_replay_or_stable_bytes() {
        let mut m1 = RunManifest::new("t", serde_json::json!({"seed": 42}));
        let mut m2 = m1.clone();
        m1.volatile = VolatileSection { run_id: "one".into(), created_utc: "2026-01-01T00:00:00Z".into() };
        m2.volatile = VolatileSection { run_id: "two".into(), created_utc: "2026-02-02T02:02:02Z".into() };
        assert_eq!(m1.stable_bytes().unwrap(), m2.stable_bytes().unwrap());
        assert!(verify_replay(&m1, &m2).unwrap().all_match());
    }

    #[test]
    fn differing_config_reports_structural_mismatch() {
        let m1 = RunManifest::new("t", serde_json::json!({"n_paths": 2000}));
        let m2 = RunManifest::new("t", serde_json::json!({"n_paths": 4000}));
        let report = verify_replay(&m1, &m2).unwrap();
        assert!(!report.all_match());
        assert!(report.mismatched.iter().any(|m| m.key == "model_config"));
    }

    #[test]
    fn missing_entry_is_structural_not_a_digest_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("a.bin"), b"alpha").unwrap();
        let mut m1 = RunManifest::new("t", serde_json::json!({}));
        m1.record_file(root, &root.join("a.bin")).unwrap();
        let m2 = RunManifest::new("t", serde_json::json!({}));
        let report = verify_replay(&m1, &m2).unwrap();
        assert_eq!(report.only_left, vec!["a.bin".to_string()]);
        assert!(report.mismatched.is_empty());
    }

    #[test]
    fn save_load_round_trip_preserves_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("t", serde_json::json!({"horizon_days": 63}));
        m.set_flag("rag", true);
        m.set_meta("weo_hash", serde_json::json!("abc123"));
        let path = dir.path().join("run_artifacts_index.json");
        m.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(m.stable_bytes().unwrap(), loaded.stable_bytes().unwrap());
    }

    #[test]
    fn closure_check_flags_unregistered_files() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("sub")).unwrap();
        std::fs::write(root.join("sub/tracked.bin"), b"x").unwrap();
        std::fs::write(root.join("sub/orphan.bin"), b"y").unwrap();
        let mut m = RunManifest::new("t", serde_json::json!({}));
        m.record_file(root, &root.join("sub/tracked.bin")).unwrap();
        let missing = m.unregistered_outputs(root, "run_artifacts_index.json");
        assert_eq!(missing, vec![root.join("sub/orphan.bin")]);
    }
}
