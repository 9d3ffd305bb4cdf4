//! Run configuration: one JSON document shared by every subcommand, echoed
//! into each output directory for provenance. Unknown keys are rejected.

use cpgd_core::codec::CodecConfig;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Codec block edge (8 or 16).
    pub block_size: u8,
    /// Full-search radius in pixels.
    pub search_radius: u8,
    /// Residual quantization step (1 = lossless).
    pub quant: u8,
    /// Run-length-code residual sections.
    pub rle: bool,
    /// Feature channels of the propagation module.
    pub channels: usize,
    /// Propagation mode: "forward" or "bidirectional".
    pub mode: String,
    /// Training timesteps of the diffusion schedule.
    pub t_train: usize,
    /// Spaced sampling steps.
    pub steps: usize,
    /// Seed for noise and parameter generation.
    pub seed: u64,
    /// Pixel-to-latent pooling factor of the generation stage.
    pub latent_factor: usize,
    /// Noise predictor name from the registry.
    pub predictor: String,
    /// Input path, echoed for provenance.
    pub input: Option<String>,
    /// Output path, echoed for provenance.
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            block_size: 16,
            search_radius: 16,
            quant: 1,
            rle: true,
            channels: 16,
            mode: "bidirectional".into(),
            t_train: 1000,
            steps: 50,
            seed: 0,
            latent_factor: 4,
            predictor: "toy".into(),
            input: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::data(format!("failed to read config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            block_size: self.block_size,
            search_radius: self.search_radius,
            quant: self.quant,
            rle: self.rle,
        }
    }

    /// Write the effective configuration next to a command's outputs.
    pub fn echo_into_dir(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("failed to create {}: {e}", dir.display())))?;
        let path = dir.join("config.json");
        self.echo_to_file(&path)
    }

    pub fn echo_to_file(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, json)
            .map_err(|e| CliError::data(format!("failed to write {}: {e}", path.display())))
    }
}
