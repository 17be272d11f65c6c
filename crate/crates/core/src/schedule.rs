//! Diffusion noise schedules and the closed-form forward noising step.

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Parameters a schedule is built from. These travel inside the model file so
/// a saved model always reconstructs the exact schedule it was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// Number of diffusion steps T.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    /// Desk-scale default: T = 100 with the conventional linear beta range.
    fn default() -> Self {
        ScheduleParams { steps: 100, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

impl ScheduleParams {
    /// Full-scale schedule: T = 1000. At this length the terminal signal level
    /// drops below 1e-4 and the fully-noised latent is indistinguishable from
    /// a standard normal.
    pub fn full_scale() -> Self {
        ScheduleParams { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Precomputed beta_t and alpha_bar_t tables for T steps.
///
/// Immutable after construction; `alpha_bar` is cached as a cumulative product
/// so the forward noising step is O(1) per call.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Build a linear-beta schedule: `betas[t]` interpolates from `beta_start` at
/// t = 1 to `beta_end` at t = T, and `alpha_bars[t]` is the cumulative product
/// of (1 - beta) up to t.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
        )));
    }
    let mut betas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut product = 1.0;
    for t in 0..steps {
        let frac = if steps == 1 { 0.0 } else { t as f64 / (steps - 1) as f64 };
        let beta = beta_start + (beta_end - beta_start) * frac;
        product *= 1.0 - beta;
        betas.push(beta);
        alpha_bars.push(product);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for 1-based t.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_bar_t for 1-based t.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Config(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// A latent-shaped tensor of i.i.d. standard-normal draws, regenerable
/// bit-identically from its seed.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    pub eps: LatentTensor,
    pub seed: u64,
}

impl NoiseSample {
    pub fn generate(seed: u64, h: usize, w: usize, c: usize) -> Self {
        let mut stream = Stream::new(seed);
        let mut eps = LatentTensor::zeros(h, w, c);
        for v in eps.values_mut() {
            *v = stream.next_normal();
        }
        NoiseSample { eps, seed }
    }

    pub fn matching(seed: u64, like: &LatentTensor) -> Self {
        let (h, w, c) = like.shape();
        NoiseSample::generate(seed, h, w, c)
    }
}

/// Closed-form forward noising:
/// `z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps`, elementwise.
pub fn diffuse(
    z0: &LatentTensor,
    t: usize,
    eps: &NoiseSample,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    schedule.check_t(t)?;
    z0.ensure_same_shape(&eps.eps, "diffuse noise")?;
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    let mut out = z0.clone();
    for (o, e) in out.values_mut().iter_mut().zip(eps.eps.values()) {
        *o = signal * *o + noise * *e;
    }
    Ok(out)
}
