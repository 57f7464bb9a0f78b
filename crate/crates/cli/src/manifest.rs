use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_s: f64,
    pub version: String,
}

/// Hex SHA-256 of the canonical configuration text.
pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub struct Recorder {
    started: Instant,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn new(subcommand: &str, canonical_config: &str, seed: u64, overrides: &[String]) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                config_hash: config_hash(canonical_config),
                seed,
                overrides: overrides.to_vec(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_clock_s: 0.0,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self) -> RunManifest {
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        self.manifest
    }
}
