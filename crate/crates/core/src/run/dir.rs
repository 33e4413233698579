use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::SCHEMA_VERSION;

pub const INDEX_FILE: &str = "index.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_PATCH_FILE: &str = "best_patch.png";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const OPTIMIZATION_FILE: &str = "optimization.json";
pub const TRIALS_FILE: &str = "trials.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TABLES_FILE: &str = "tables.csv";
pub const CHART_FILE: &str = "asr_by_distance.svg";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunIndex {
    pub schema_version: u32,
    pub files: Vec<IndexEntry>,
}

/// Flat-file run output. One writer per directory.
#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::MissingFile(root));
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_bytes(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.join(rel);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    /// Reads a JSON artifact after checking its schema version.
    pub fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let p = self.join(rel);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", p.display())))?;
        super::check_schema(&raw)?;
        serde_json::from_value(raw).map_err(|e| Error::Serde(format!("{}: {e}", p.display())))
    }

    /// Hashes every file under the directory (except the index itself) and
    /// writes `index.json`.
    pub fn write_index(&self) -> Result<RunIndex> {
        let index = RunIndex { schema_version: SCHEMA_VERSION, files: scan(&self.root)? };
        self.write_json(INDEX_FILE, &index)?;
        Ok(index)
    }
}

fn sha256_file(p: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn scan(root: &Path) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("walked from root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let rel = rel.join("/");
            if rel == INDEX_FILE {
                continue;
            }
            let (sha256, bytes) = sha256_file(&path)?;
            out.push(IndexEntry { path: rel, sha256, bytes });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Verification {
    pub checked: usize,
    pub missing: Vec<String>,
    pub mismatched: Vec<String>,
    /// Present on disk but not in the index.
    pub unlisted: Vec<String>,
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty() && self.unlisted.is_empty()
    }
}

/// Recomputes every hash listed in `index.json`.
pub fn verify_run(root: &Path) -> Result<Verification> {
    let dir = RunDirectory::open(root)?;
    let index: RunIndex = dir.read_json(INDEX_FILE)?;
    let mut v = Verification::default();
    for e in &index.files {
        let p = root.join(&e.path);
        if !p.exists() {
            v.missing.push(e.path.clone());
            continue;
        }
        let (sha, _) = sha256_file(&p)?;
        if sha != e.sha256 {
            v.mismatched.push(e.path.clone());
        }
        v.checked += 1;
    }
    let listed: std::collections::HashSet<&str> = index.files.iter().map(|e| e.path.as_str()).collect();
    v.unlisted = scan(root)?.into_iter().map(|e| e.path).filter(|p| !listed.contains(p.as_str())).collect();
    Ok(v)
}
