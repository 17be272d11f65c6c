//! Run configuration: one structured file covering every pipeline stage,
//! with command-line overrides layered on top.
//!
//! Resolution precedence is defaults < config file < command-line flags.
//! Unknown keys in the file are rejected. Every command writes its fully
//! resolved configuration next to its outputs for provenance.

use dqc_core::codec::CodecParams;
use dqc_core::denoiser::NetConfig;
use dqc_core::error::{Error, Result};
use dqc_core::model::Model;
use dqc_core::postprocess::PostprocessConfig;
use dqc_core::schedule::ScheduleParams;
use dqc_core::scorer::InferenceConfig;
use dqc_core::synth::SynthConfig;
use dqc_core::tiler::TileConfig;
use dqc_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Inference settings as optional overrides: unset fields fall back to the
/// values recorded in the model file (or their built-in defaults at
/// training time).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceOverrides {
    pub t_star: Option<usize>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleParams,
    pub codec: CodecParams,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub inference: InferenceOverrides,
    pub postprocess: PostprocessConfig,
    pub synth: SynthConfig,
    pub tile: TileConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn emit(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Effective inference settings for a loaded model: file/flag overrides
    /// win, otherwise the model's recorded defaults apply.
    pub fn inference_for(&self, model: &Model) -> InferenceConfig {
        InferenceConfig {
            t_star: self.inference.t_star.unwrap_or(model.t_star),
            draws: self.inference.draws.unwrap_or(model.draws),
            seed: self.inference.seed.unwrap_or_else(|| InferenceConfig::default().seed),
        }
    }

    /// Inference defaults stamped into a freshly trained model file.
    pub fn inference_for_training(&self) -> (usize, usize) {
        let t_star = self.inference.t_star.unwrap_or(0); // 0 = ceil(0.8 T)
        let draws = self.inference.draws.unwrap_or(InferenceConfig::default().draws);
        (t_star, draws)
    }
}
