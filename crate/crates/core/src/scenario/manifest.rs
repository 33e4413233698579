//! Ingestion of externally captured frames.
//!
//! ```json
//! {"frames": [{"file": "f000.png", "distance_m": 30.0, "roi": [x, y, w, h]}]}
//! ```
//!
//! Paths are relative to the manifest's directory. `critical_visible` is an
//! optional per-entry hint for the mock oracle.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, PixelRect};

#[derive(Debug, Error)]
pub enum ManifestProblem {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("distance {next} does not decrease from {prev}")]
    NonMonotone { prev: f64, next: f64 },
    #[error("bad image {}: {reason}", path.display())]
    BadImage { path: PathBuf, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    frames: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    file: PathBuf,
    distance_m: f64,
    roi: [i64; 4],
    #[serde(default)]
    critical_visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFrame {
    pub distance: f64,
    pub image: ImageBuffer,
    /// Where the patch appears in this frame.
    pub roi: PixelRect,
    pub critical_visible: bool,
}

fn problem(entry: usize, p: ManifestProblem) -> Error {
    Error::Manifest { entry, problem: p }
}

pub fn load_frames(manifest_path: &Path) -> Result<Vec<ExternalFrame>> {
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<ExternalFrame> = Vec::with_capacity(manifest.frames.len());
    for (i, entry) in manifest.frames.into_iter().enumerate() {
        if !(entry.distance_m > 0.0) || !entry.distance_m.is_finite() {
            return Err(problem(i, ManifestProblem::Invalid(format!("distance_m must be > 0, got {}", entry.distance_m))));
        }
        if let Some(prev) = out.last() {
            if entry.distance_m >= prev.distance {
                return Err(problem(i, ManifestProblem::NonMonotone { prev: prev.distance, next: entry.distance_m }));
            }
        }
        let [x, y, w, h] = entry.roi;
        if w <= 0 || h <= 0 || w > u32::MAX as i64 || h > u32::MAX as i64 {
            return Err(problem(i, ManifestProblem::Invalid(format!("roi size must be positive, got {w}x{h}"))));
        }
        let path = base.join(&entry.file);
        if !path.exists() {
            return Err(problem(i, ManifestProblem::MissingFile(path)));
        }
        let image = ImageBuffer::load_png(&path)
            .map_err(|e| problem(i, ManifestProblem::BadImage { path: path.clone(), reason: e.to_string() }))?;
        out.push(ExternalFrame {
            distance: entry.distance_m,
            image,
            roi: PixelRect::new(x, y, w as u32, h as u32),
            critical_visible: entry.critical_visible,
        });
    }
    if out.is_empty() {
        return Err(Error::Manifest { entry: 0, problem: ManifestProblem::Invalid("manifest has no frames".into()) });
    }
    Ok(out)
}
