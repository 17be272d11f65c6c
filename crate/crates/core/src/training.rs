//! Optimization of the noise predictor under the basic denoising loss and the
//! enhanced combined loss with the contrastive hinge term.

use crate::codec::{encode, CodecConfig, ImagePatch};
use crate::denoiser::{
    adaptor_backward, apply_adaptor, backward, forward, AdaptorGrads, AdaptorParams,
    DenoiserGrads, DenoiserParams, NetConfig,
};
use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::model::Mode;
use crate::rng::{derive, Stream};
use crate::schedule::{diffuse, NoiseSchedule, NoiseSample};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

// Sub-stream labels off the training seed.
const INIT_STREAM: u64 = 0xA1;
const BATCH_STREAM: u64 = 0xB2;

/// Training hyperparameters. The margin applies to the element-count
/// normalized squared latent distance, so its meaning is independent of the
/// latent resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub margin: f64,
    pub lambda: f64,
    pub seed: u64,
    pub mode: Mode,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2500,
            batch: 8,
            lr: 1e-3,
            margin: 1.2,
            lambda: 0.5,
            seed: 42,
            mode: Mode::Basic,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusRole {
    Clean,
    Artifact,
}

/// A directory of patch images with a deterministic (sorted) file order.
#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    pub role: CorpusRole,
    files: Vec<PathBuf>,
}

impl Corpus {
    /// Index every `.png` under `root` (non-recursive), sorted by file name.
    pub fn open(root: &Path, role: CorpusRole) -> Result<Corpus> {
        let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |ext| ext == "png"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no .png patches under {}", root.display())));
        }
        Ok(Corpus { root: root.to_path_buf(), role, files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load_patch(&self, idx: usize) -> Result<ImagePatch> {
        let path = &self.files[idx];
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
        if img.width() % 8 != 0 || img.height() % 8 != 0 {
            return Err(Error::Data(format!(
                "{}: {}x{} is not codec-compatible (multiples of 8 required)",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        Ok(ImagePatch::from_rgb8(&img))
    }
}

/// Mean over all elements of the squared difference between the actual and
/// predicted noise.
pub fn basic_loss(eps: &NoiseSample, eps_hat: &LatentTensor) -> Result<f64> {
    eps.eps.ensure_same_shape(eps_hat, "basic loss")?;
    let n = eps_hat.values().len() as f64;
    let sum: f64 = eps
        .eps
        .values()
        .iter()
        .zip(eps_hat.values())
        .map(|(e, p)| (e - p) * (e - p))
        .sum();
    Ok(sum / n)
}

/// Element-count normalized squared L2 distance between two latents.
pub fn normalized_sq_distance(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    a.ensure_same_shape(b, "latent distance")?;
    let n = a.values().len() as f64;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Contrastive hinge on adaptor outputs: `max(0, margin - dbar2)` where
/// `dbar2` is the normalized squared distance. The penalty is active exactly
/// while the pair sits closer than the margin, so minimizing it pushes
/// artifact latents away from clean ones.
pub fn contrastive_loss(z_clean: &LatentTensor, z_art: &LatentTensor, margin: f64) -> Result<f64> {
    if margin <= 0.0 {
        return Err(Error::Config("margin must be positive".into()));
    }
    let d = normalized_sq_distance(z_clean, z_art)?;
    Ok((margin - d).max(0.0))
}

/// Total loss: basic term plus `lambda` times the contrastive term.
pub fn combined_loss(l_basic: f64, l_con: f64, lambda: f64) -> f64 {
    l_basic + lambda * l_con
}

/// Uniform timestep draw from 1..=T.
fn sample_timestep(stream: &mut Stream, t_count: usize) -> usize {
    1 + stream.next_index(t_count)
}

/// One loss-log line per optimization step.
#[derive(Debug, Clone, Copy)]
pub struct LossRecord {
    pub step: usize,
    pub basic: f64,
    pub contrastive: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: DenoiserParams,
    pub adaptor: Option<AdaptorParams>,
    pub log: Vec<LossRecord>,
}

/// Adaptive-moment optimizer over a fixed list of parameter groups.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(sizes: &[usize], cfg: &TrainConfig) -> Self {
        Adam {
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&[f64]]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (gi, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            for (k, g) in grad.iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                param[k] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Train the noise predictor (and the adaptor in enhanced mode).
///
/// Per step: sample a mini-batch of clean patches, a uniform timestep and a
/// fresh noise draw per patch, form the noised latent, and take the mean
/// squared noise-prediction error. Enhanced mode routes every latent through
/// the adaptor, pairs each clean patch with a uniformly sampled artifact
/// patch, and adds `lambda` times the contrastive hinge. One adaptive-moment
/// update per step. Gradient accumulation runs in a fixed batch order, so
/// identical inputs give bit-identical parameters.
pub fn train(
    clean: &Corpus,
    artifact: Option<&Corpus>,
    cfg: &TrainConfig,
    net: &NetConfig,
    codec: &CodecConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    if clean.is_empty() {
        return Err(Error::Data("clean corpus is empty".into()));
    }
    match (cfg.mode, artifact) {
        (Mode::Basic, Some(_)) => {
            return Err(Error::Config(
                "basic mode takes no artifact corpus; drop it or train enhanced".into(),
            ))
        }
        (Mode::Enhanced, None) => {
            return Err(Error::Config("enhanced mode requires an artifact corpus".into()))
        }
        _ => {}
    }

    let t_count = schedule.steps();
    let mut denoiser = DenoiserParams::init(
        derive(cfg.seed, INIT_STREAM),
        codec.channels,
        net.hidden,
        net.time_dim,
        t_count,
    )?;
    let mut adaptor = match cfg.mode {
        Mode::Basic => None,
        Mode::Enhanced => Some(AdaptorParams::identity(codec.channels)),
    };

    let mut sizes: Vec<usize> = denoiser.groups().iter().map(|g| g.len()).collect();
    if let Some(a) = &adaptor {
        sizes.extend(a.groups().iter().map(|g| g.len()));
    }
    let mut optimizer = Adam::new(&sizes, cfg);

    let mut stream = Stream::new(derive(cfg.seed, BATCH_STREAM));
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut grads = DenoiserGrads::zeros_like(&denoiser);
        let mut adaptor_grads = adaptor.as_ref().map(AdaptorGrads::zeros_like);
        let mut basic_sum = 0.0;
        let mut con_sum = 0.0;
        let batch_inv = 1.0 / cfg.batch as f64;

        for _ in 0..cfg.batch {
            // Draw order per item: clean index, timestep, noise seed, then
            // the artifact index in enhanced mode.
            let clean_idx = stream.next_index(clean.len());
            let t = sample_timestep(&mut stream, t_count);
            let noise_seed = stream.next_u64();
            let art_idx = artifact.map(|a| stream.next_index(a.len()));

            let patch = clean.load_patch(clean_idx)?;
            let encoded = encode(&patch, codec)?;
            let z0 = match &adaptor {
                Some(a) => apply_adaptor(a, &encoded)?,
                None => encoded.clone(),
            };
            let eps = NoiseSample::matching(noise_seed, &z0);
            let z_t = diffuse(&z0, t, &eps, schedule)?;
            let (eps_hat, cache) = forward(&denoiser, &z_t, t)?;
            basic_sum += basic_loss(&eps, &eps_hat)? * batch_inv;

            // d(L_basic)/d(eps_hat) for the batch-averaged loss.
            let n = eps_hat.values().len() as f64;
            let mut grad_out = LatentTensor::zeros(eps_hat.height(), eps_hat.width(), eps_hat.channels());
            for (g, (p, e)) in grad_out
                .values_mut()
                .iter_mut()
                .zip(eps_hat.values().iter().zip(eps.eps.values()))
            {
                *g = 2.0 * (p - e) / n * batch_inv;
            }
            let want_input_grad = adaptor.is_some();
            let (item_grads, input_grad) = backward(&denoiser, &cache, &grad_out, want_input_grad)?;
            grads.accumulate(&item_grads);

            if let (Some(a), Some(ag)) = (&adaptor, adaptor_grads.as_mut()) {
                // Basic-loss path into the adaptor: z_t scales z0 by
                // sqrt(alpha_bar_t).
                let mut g_z0 = input_grad.expect("input gradient requested");
                let scale = schedule.alpha_bar(t).sqrt();
                for v in g_z0.values_mut() {
                    *v *= scale;
                }
                ag.accumulate(&adaptor_backward(a, &encoded, &g_z0)?);

                // Contrastive pair: one artifact patch per clean patch.
                let art = artifact.expect("enhanced mode has artifact corpus");
                let art_patch = art.load_patch(art_idx.expect("artifact index drawn"))?;
                let art_encoded = encode(&art_patch, codec)?;
                let za = apply_adaptor(a, &art_encoded)?;
                let dbar2 = normalized_sq_distance(&z0, &za)?;
                con_sum += (cfg.margin - dbar2).max(0.0) * batch_inv;
                if dbar2 < cfg.margin {
                    // d(max(0, m - dbar2))/dz = -2 (zc - za) / n, mirrored for za.
                    let n_lat = z0.values().len() as f64;
                    let coeff = cfg.lambda * batch_inv * 2.0 / n_lat;
                    let mut g_zc = LatentTensor::zeros(z0.height(), z0.width(), z0.channels());
                    let mut g_za = g_zc.clone();
                    for ((gc, ga), (zc_v, za_v)) in g_zc
                        .values_mut()
                        .iter_mut()
                        .zip(g_za.values_mut())
                        .zip(z0.values().iter().zip(za.values()))
                    {
                        let diff = zc_v - za_v;
                        *gc = -coeff * diff;
                        *ga = coeff * diff;
                    }
                    ag.accumulate(&adaptor_backward(a, &encoded, &g_zc)?);
                    ag.accumulate(&adaptor_backward(a, &art_encoded, &g_za)?);
                }
            }
        }

        let combined = combined_loss(basic_sum, con_sum, cfg.lambda);
        if !combined.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step}: basic {basic_sum}, contrastive {con_sum}"
            )));
        }
        log.push(LossRecord { step, basic: basic_sum, contrastive: con_sum, combined });

        {
            let mut params: Vec<&mut Vec<f64>> = denoiser.groups_mut().into_iter().collect();
            let mut grad_refs: Vec<&[f64]> = grads.groups().to_vec();
            if let (Some(a), Some(ag)) = (adaptor.as_mut(), adaptor_grads.as_ref()) {
                params.extend(a.groups_mut());
                grad_refs.extend(ag.groups());
            }
            optimizer.step(&mut params, &grad_refs);
        }

        if !denoiser.is_finite() || adaptor.as_ref().map_or(false, |a| !a.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameters after step {step}"
            )));
        }
    }

    Ok(TrainOutcome { denoiser, adaptor, log })
}

/// Render the loss log in its on-disk format: one tab-separated record per
/// step with the step index and the basic, contrastive, and combined losses.
pub fn format_loss_log(log: &[LossRecord]) -> String {
    let mut out = String::new();
    for rec in log {
        out.push_str(&format!(
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\n",
            rec.step, rec.basic, rec.contrastive, rec.combined
        ));
    }
    out
}
