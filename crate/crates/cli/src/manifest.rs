//! Append-only run manifests: one JSON object per line in
//! `<run-dir>/manifest.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<String>,
    /// Effective settings after defaults and config files are applied.
    pub settings: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub timestamp: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            argv,
            config: None,
            settings: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
        }
    }

    fn artifact(path: &Path) -> std::io::Result<Artifact> {
        Ok(Artifact { path: path.display().to_string(), sha256: sha256_file(path)? })
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(Self::artifact(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> std::io::Result<()> {
        self.outputs.push(Self::artifact(path)?);
        Ok(())
    }

    pub fn append_to(&self, run_dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let line = serde_json::to_string(self).map_err(std::io::Error::other)?;
        writeln!(f, "{line}")?;
        Ok(path)
    }
}
