//! Inference-time outlier scoring.
//!
//! A query patch is encoded (and passed through the adaptor when the model is
//! enhanced), noised at a fixed timestep, and run through the noise predictor.
//! The channel-pooled squared prediction error per latent cell is the outlier
//! score: cells the model cannot denoise well lie off the learned clean-image
//! distribution.

use crate::codec::{encode, ImagePatch};
use crate::error::{Error, Result};
use crate::heatmap::ErrorHeatmap;
use crate::latent::LatentTensor;
use crate::model::Model;
use crate::rng::derive;
use crate::schedule::{diffuse, NoiseSample};
use serde::{Deserialize, Serialize};

/// Inference settings: the fixed scoring timestep, the number of independent
/// noise draws averaged per patch, and the base seed all draw seeds derive
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Scoring timestep; 0 selects the default ceil(0.8 * T).
    pub t_star: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { t_star: 0, draws: 4, seed: 0x5C0_4E }
    }
}

/// The default scoring timestep for a schedule of length `t_count`:
/// ceil(0.8 * T), preserving the signal-to-noise ratio the fixed full-scale
/// step t* = 800 selects at T = 1000.
pub fn default_t_star(t_count: usize) -> usize {
    (0.8 * t_count as f64).ceil() as usize
}

impl InferenceConfig {
    pub fn resolve_t_star(&self, t_count: usize) -> Result<usize> {
        let t = if self.t_star == 0 { default_t_star(t_count) } else { self.t_star };
        if t == 0 || t > t_count {
            return Err(Error::Config(format!("t_star {t} outside 1..={t_count}")));
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        Ok(())
    }
}

/// Channel-pooled squared prediction error:
/// `map(i, j) = mean_c (eps(i,j,c) - eps_hat(i,j,c))^2`.
pub fn error_map(eps: &NoiseSample, eps_hat: &LatentTensor) -> Result<ErrorHeatmap> {
    eps.eps.ensure_same_shape(eps_hat, "error map")?;
    let (h, w, c) = eps_hat.shape();
    let mut out = ErrorHeatmap::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                let d = eps.eps.get(i, j, ch) - eps_hat.get(i, j, ch);
                acc += d * d;
            }
            out.set(i, j, acc / c as f64);
        }
    }
    out.origin = eps_hat.origin;
    Ok(out)
}

/// Seed for one noise draw of one patch: derived from the base seed, the
/// patch origin, and the draw index so that distinct patches and draws use
/// disjoint noise streams regardless of scoring order.
pub fn draw_seed(base: u64, origin: (usize, usize), k: usize) -> u64 {
    derive(derive(derive(base, origin.0 as u64), origin.1 as u64), k as u64)
}

/// Score a patch with explicit per-draw noise seeds and an explicit timestep.
/// `score_patch` derives these from the config; tests can force seeds to
/// coincide.
pub fn score_patch_with_seeds(
    patch: &ImagePatch,
    model: &Model,
    t_star: usize,
    seeds: &[u64],
) -> Result<ErrorHeatmap> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one noise draw is required".into()));
    }
    let encoded = encode(patch, &model.codec)?;
    let z0 = match &model.adaptor {
        Some(adaptor) => crate::denoiser::apply_adaptor(adaptor, &encoded)?,
        None => encoded,
    };
    let (h, w, _) = z0.shape();
    let mut acc = ErrorHeatmap::zeros(h, w);
    for &seed in seeds {
        let eps = NoiseSample::matching(seed, &z0);
        let z_t = diffuse(&z0, t_star, &eps, &model.schedule)?;
        let eps_hat = crate::denoiser::predict_noise(&model.denoiser, &z_t, t_star)?;
        let map = error_map(&eps, &eps_hat)?;
        for (a, m) in acc.values_mut().iter_mut().zip(map.values()) {
            *a += m;
        }
    }
    let inv = 1.0 / seeds.len() as f64;
    for v in acc.values_mut() {
        *v *= inv;
    }
    acc.origin = patch.origin;
    Ok(acc)
}

/// Score a query patch: encode, noise at the fixed timestep, predict, and
/// average the channel-pooled error over `cfg.draws` independent noise draws.
pub fn score_patch(patch: &ImagePatch, model: &Model, cfg: &InferenceConfig) -> Result<ErrorHeatmap> {
    cfg.validate()?;
    let t_star = cfg.resolve_t_star(model.schedule.steps())?;
    let seeds: Vec<u64> = (0..cfg.draws)
        .map(|k| draw_seed(cfg.seed, patch.origin, k))
        .collect();
    score_patch_with_seeds(patch, model, t_star, &seeds)
}
