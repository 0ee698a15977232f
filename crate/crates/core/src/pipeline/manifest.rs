use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use super::config::RunConfig;
use crate::error::{Error, Result};

/// SHA-1 of `bytes` as git hashes a blob, so `git hash-object` agrees.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha1: String,
}

impl FileHash {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileHash {
            role: role.to_string(),
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha1: git_blob_sha1(&data),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<FileHash>,
}

/// Hashes of every input file named by `config`.
pub fn hash_inputs(config: &RunConfig) -> Result<Vec<FileHash>> {
    let i = &config.inputs;
    let mut out = Vec::new();
    if let Some(p) = &i.observations {
        out.push(FileHash::of("observations", p)?);
    }
    out.push(FileHash::of("vr", &i.vr)?);
    out.push(FileHash::of("covariates", &i.covariates)?);
    out.push(FileHash::of("groups", &i.groups)?);
    out.push(FileHash::of("envelopes", &i.envelopes)?);
    out.push(FileHash::of("membership", &i.membership)?);
    if let Some(p) = &i.comparison {
        out.push(FileHash::of("comparison", p)?);
    }
    Ok(out)
}
