//! Run manifests: everything needed to repeat a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub seed: u64,
    pub threads: usize,
    pub dry_run: bool,
    pub settings: Settings,
    /// File path to lowercase hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub argv: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, threads: usize, dry_run: bool) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            created: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed: settings.seed,
            threads,
            dry_run,
            settings: settings.clone(),
            inputs: BTreeMap::new(),
            argv: std::env::args().collect(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.add_input(p)?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("{}", path.display()))?;
        log::info!("wrote manifest {}", path.display());
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_records_settings_and_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("ent_links");
        std::fs::write(&input, "a\tb\n").unwrap();
        let s = Settings {
            seed: 9,
            ..Default::default()
        };
        let mut m = RunManifest::new("train", &s, 1, true);
        m.add_input(&input).unwrap();
        let out = dir.path().join("sub/manifest.json");
        m.write(&out).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["seed"], 9);
        assert_eq!(v["settings"]["seed"], 9);
        assert_eq!(v["settings"]["epochs"], s.epochs);
        assert_eq!(v["dry_run"], true);
        assert_eq!(v["inputs"][input.display().to_string()].as_str().unwrap().len(), 64);
        assert!(m.add_input(&dir.path().join("missing")).is_err());
    }
}
