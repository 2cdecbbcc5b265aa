//! Reproducibility record for an experiment run: tool version, config hash,
//! seeds, method metadata and a digest of every file written. Re-running the
//! same config against the same binary must reproduce every digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blend::MethodSpec;
use crate::error::Result;
use crate::schedule::SamplerConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Path relative to the run's output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodSpec>,
    pub outputs: Vec<OutputDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEcho {
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub domain: String,
    pub noise: NoiseEcho,
    pub sampler: SamplerConfig,
    /// Digest of the checkpoint backing generation, or "oracle".
    pub model: String,
    pub jobs: Vec<JobManifest>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        serde_json::from_str(text)
            .map_err(|e| crate::error::Error::Format(format!("manifest does not parse: {e}")))
    }
}
