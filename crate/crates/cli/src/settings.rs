//! Settings resolution: defaults, then an optional JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;

use crate::errors::usage;

/// Reads a settings file; absent fields keep their defaults.
pub fn load<S: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<S> {
    let Some(path) = path else { return Ok(S::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Parses a flag value through the type's JSON string form, so flag and
/// config spellings agree (`standard`, `norm`, `squared-euclidean`, ...).
pub fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn required(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    path.clone().ok_or_else(|| usage(format!("missing required {what}")))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        let occupied = !dir.is_dir() || fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(usage(format!("{} already exists; pass --force to overwrite", dir.display())));
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
