//! Run configuration, the on-disk run directory, and the optimize /
//! evaluate / report pipelines the CLI drives.

mod config;
mod dir;
mod pipeline;

pub use config::*;
pub use dir::*;
pub use pipeline::*;

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Reads JSON or TOML depending on the file extension.
pub fn load_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display()))),
        _ => serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display()))),
    }
}
