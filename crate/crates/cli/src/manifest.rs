use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record written next to every command's outputs. Holds the fully
/// resolved settings, so `replay` can reproduce the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Artifact kind to on-disk format version.
    pub formats: BTreeMap<String, u32>,
    /// The only non-reproducible field.
    pub timestamp: String,
}

impl RunManifest {
    pub fn new<S: Serialize>(command: &str, config: &S, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            formats: BTreeMap::new(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn format(mut self, kind: &str, version: u32) -> Self {
        self.formats.insert(kind.to_string(), version);
        self
    }

    /// Writes the manifest into `dir`, listing `outputs` as given.
    pub fn write(mut self, dir: &Path, outputs: &[&str]) -> anyhow::Result<()> {
        self.outputs = outputs.iter().map(PathBuf::from).collect();
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| alwnn::Error::Format(format!("{} is not a run manifest: {e}", path.display())))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("synth", &serde_json::json!({"seed": 4}), Some(4))
            .unwrap()
            .input(Path::new("in"))
            .format("dataset", 1);
        m.clone().write(dir.path(), &["dataset.bin"]).unwrap();
        let back = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.outputs, vec![PathBuf::from("dataset.bin")]);
        assert_eq!((back.command, back.config, back.formats), (m.command, m.config, m.formats));
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "{}").unwrap();
        let e = RunManifest::read(&p).unwrap_err();
        assert!(e.downcast_ref::<alwnn::Error>().is_some());
    }
}
