//! Resume manifest: one JSON line per finished grid cell.
//!
//! A cell is only skipped on resume when its manifest entry matches the
//! current config hash and, for completed cells, its records file is still
//! present. Lines that fail to parse are ignored so a torn write from an
//! interrupted run costs a recompute, never a wrong skip.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Ran and produced at least one record.
    Completed,
    /// Ran but every sample overflowed the context; no records exist.
    Skipped,
    /// Aborted on an error; will be retried on resume.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: String,
    pub config_hash: String,
    pub status: CellStatus,
    pub records: usize,
}

/// Latest entry per cell key, keeping only lines for `config_hash`.
pub fn read_manifest(path: &Path, config_hash: &str) -> HashMap<String, ManifestEntry> {
    let mut map = HashMap::new();
    let Ok(text) = std::fs::read_to_string(path) else {
        return map;
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestEntry>(line) {
            Ok(entry) if entry.config_hash == config_hash => {
                map.insert(entry.key.clone(), entry);
            }
            Ok(_) => {}
            Err(e) => log::warn!("ignoring malformed manifest line: {e}"),
        }
    }
    map
}

/// Append-only manifest handle; each entry is flushed immediately.
pub struct ManifestWriter {
    file: File,
    path: PathBuf,
}

impl ManifestWriter {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ManifestWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, entry: &ManifestEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("manifest entry serialises");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// 64-bit FNV-1a, hex encoded. Stable across runs, platforms, and compiler
/// versions, which is all a resume check needs.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
