//! `manifest.json`: config hash, seeds, and a content hash for every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseFailure {
    pub phase: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub candidate_seeds: Vec<u64>,
    /// Phase name to (relative path to SHA-256).
    pub phases: BTreeMap<String, BTreeMap<String, String>>,
    pub error: Option<PhaseFailure>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).at(&p)?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::Parse {
            path: p,
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&p, text).at(p)
    }

    /// Hashes `files` (relative to `dir`) and records them under `phase`. When
    /// the previous manifest already lists the phase, every hash must match.
    pub fn record(
        &mut self,
        dir: &Path,
        phase: &str,
        files: &[String],
        previous: Option<&Manifest>,
    ) -> Result<(), CliError> {
        let mut hashes = BTreeMap::new();
        for f in files {
            hashes.insert(f.clone(), sha256_file(&dir.join(f))?);
        }
        if let Some(old) = previous.and_then(|m| m.phases.get(phase)) {
            for (f, h) in &hashes {
                if old.get(f).is_some_and(|o| o != h) {
                    return Err(CliError::HashMismatch(f.clone()));
                }
            }
        }
        self.phases.insert(phase.to_string(), hashes);
        Ok(())
    }

    /// Re-hashes every listed file.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for (f, h) in self.phases.values().flatten() {
            let p = dir.join(f);
            if !p.exists() {
                return Err(CliError::Missing(p));
            }
            if &sha256_file(&p)? != h {
                return Err(CliError::HashMismatch(f.clone()));
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
