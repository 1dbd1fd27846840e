//! Reproducibility manifest written next to every run's outputs.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct OutputChecksum {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub code_version: String,
    pub calibration_hash: String,
    /// Calibration constants as they appear in the normalized config.
    pub calibration: String,
    pub outputs: Vec<OutputChecksum>,
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

impl RunManifest {
    pub fn new(subcommand: &str, normalized_config: &str, calibration: &str, files: &[(String, Vec<u8>)], wall: f64, workers: usize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_hash: sha256_hex(normalized_config.as_bytes()),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            calibration_hash: sha256_hex(calibration.as_bytes()),
            calibration: calibration.to_string(),
            outputs: files.iter().map(|(f, b)| OutputChecksum { file: f.clone(), sha256: sha256_hex(b), bytes: b.len() }).collect(),
            wall_clock_seconds: wall,
            workers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is serializable") + "\n"
    }
}
