//! Run manifests: enough to replay a run and check its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Invocation;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub invocation: Invocation,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub inputs: Vec<FileDigest>,
    pub config: ExperimentConfig,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path, label: String) -> Result<FileDigest> {
    Ok(FileDigest {
        path: label,
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_NAME);
        fs::write(&path, self.to_toml()).map_err(CliError::io(&path))?;
        Ok(path)
    }

    /// Fails with a data error when an input no longer matches its digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for d in &self.inputs {
            let now = sha256_file(Path::new(&d.path))?;
            if now != d.sha256 {
                return Err(CliError::Data(format!("input {} changed since the recorded run", d.path)));
            }
        }
        Ok(())
    }

    /// Names of outputs whose digest under `out_dir` differs from the record.
    pub fn mismatched_outputs(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for d in &self.outputs {
            let p = out_dir.join(&d.path);
            if !p.exists() || sha256_file(&p)? != d.sha256 {
                bad.push(d.path.clone());
            }
        }
        Ok(bad)
    }
}
