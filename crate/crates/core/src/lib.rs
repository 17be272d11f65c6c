//! Diffusion-residual outlier detection for image quality control.
//!
//! The library learns the distribution of clean image patches with a small
//! latent denoising-diffusion model and scores query patches by their
//! noise-prediction error: a patch is encoded into a compact latent grid,
//! noised at a fixed timestep, and the trained predictor's per-cell error
//! becomes an outlier heatmap. Adaptive thresholding and morphology turn
//! stitched heatmaps into binary artifact masks.
//!
//! Modules follow the pipeline stages:
//!
//! - [`schedule`]: noise schedules and closed-form forward noising
//! - [`codec`]: the frozen patch-to-latent encoder
//! - [`denoiser`]: the trainable noise predictor and the 1x1 adaptor
//! - [`training`]: losses and the optimization loop
//! - [`scorer`]: per-patch error heatmaps
//! - [`tiler`]: sliding-window traversal and heatmap stitching
//! - [`postprocess`]: smoothing, bounded-Otsu thresholding, morphology
//! - [`synth`]: deterministic synthetic corpora with ground truth
//! - [`eval`]: sensitivity / precision / F1 / AUROC against ground truth
//! - [`model`]: the serialized model bundle (DQCM)
//! - [`pipeline`]: whole-image scoring and QC

pub mod codec;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod latent;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod schedule;
pub mod scorer;
pub mod synth;
pub mod tiler;
pub mod training;

pub use error::{Error, Result};
pub use latent::LatentTensor;
pub use model::{Mode, Model};
