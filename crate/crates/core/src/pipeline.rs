//! Whole-image quality control: tile, score patches (optionally in
//! parallel), stitch, and binarize.

use crate::codec::ImagePatch;
use crate::error::{Error, Result};
use crate::heatmap::ErrorHeatmap;
use crate::model::Model;
use crate::postprocess::{binarize, ArtifactMask, PostprocessConfig};
use crate::scorer::{score_patch, InferenceConfig};
use crate::tiler::{plan, stitch, TileConfig};
use rayon::prelude::*;

/// Score a full image into a stitched heatmap. Patches are scored
/// independently (across `jobs` workers when `jobs != 1`; 0 means the
/// default worker count) and reduced deterministically: per-patch seeds
/// derive from patch origins, and stitching averages in a fixed order, so
/// the result is independent of the worker count.
pub fn score_image(
    image: &ImagePatch,
    model: &Model,
    tile: &TileConfig,
    inference: &InferenceConfig,
    jobs: usize,
) -> Result<ErrorHeatmap> {
    let grid = plan((image.height(), image.width()), tile.patch, tile.stride)?;
    let score_one = |&(r, c): &(usize, usize)| -> Result<((usize, usize), ErrorHeatmap)> {
        let patch = image.crop(r, c, grid.patch, grid.patch)?;
        let map = score_patch(&patch, model, inference)?;
        Ok(((r, c), map))
    };
    let scored: Result<Vec<_>> = if jobs == 1 {
        grid.origins().iter().map(score_one).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if jobs > 0 {
            builder = builder.num_threads(jobs);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| grid.origins().par_iter().map(score_one).collect())
    };
    stitch(&scored?, &grid)
}

/// Outputs of a full QC pass over one image.
#[derive(Debug, Clone)]
pub struct QcOutcome {
    pub heatmap: ErrorHeatmap,
    pub mask: ArtifactMask,
}

/// Full pipeline: stitched heatmap, then smoothing / bounded-Otsu /
/// morphology into the binary artifact mask.
pub fn qc_image(
    image: &ImagePatch,
    model: &Model,
    tile: &TileConfig,
    inference: &InferenceConfig,
    post: &PostprocessConfig,
    jobs: usize,
) -> Result<QcOutcome> {
    let heatmap = score_image(image, model, tile, inference, jobs)?;
    let mask = binarize(&heatmap, post)?;
    Ok(QcOutcome { heatmap, mask })
}

/// Linear-interpolated quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("quantile of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Derive confident bounds from clean-split scores, taken after the same
/// Gaussian smoothing the mask pipeline applies. `v_min` sits at the 99.5th
/// percentile of smoothed clean scores: nearly everything a clean image
/// produces clamps to the bottom bin, so clean images degenerate to empty
/// masks while anything above the clean envelope enters the adaptive split.
/// `v_max` doubles that envelope: scores twice the clean extreme are
/// confidently artifact.
pub fn calibrate_bounds(smoothed_clean_scores: &[f64]) -> Result<(f64, f64)> {
    let v_min = quantile(smoothed_clean_scores, 0.995)?;
    let mut v_max = 2.0 * v_min;
    if v_max <= v_min {
        v_max = v_min + 1e-6;
    }
    Ok((v_min, v_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecParams;
    use crate::denoiser::DenoiserParams;
    use crate::schedule::ScheduleParams;
    use crate::synth::gen_clean;

    fn small_model() -> Model {
        let schedule = ScheduleParams::default();
        let denoiser = DenoiserParams::init(3, 4, 8, 16, schedule.steps).unwrap();
        Model::assemble(schedule, CodecParams::default(), denoiser, None, 0, 2).unwrap()
    }

    #[test]
    fn stitched_dims_follow_the_image() {
        let model = small_model();
        let image = gen_clean(1, 96).unwrap();
        let tile = TileConfig { patch: 64, stride: 64 };
        let inference = InferenceConfig { t_star: 0, draws: 1, seed: 5 };
        let map = score_image(&image, &model, &tile, &inference, 1).unwrap();
        assert_eq!((map.height(), map.width()), (12, 12));
        assert!(map.is_valid());
    }

    #[test]
    fn single_patch_image_heatmap_is_patch_scale() {
        let model = small_model();
        let image = gen_clean(2, 64).unwrap();
        let tile = TileConfig { patch: 64, stride: 64 };
        let inference = InferenceConfig::default();
        let map = score_image(&image, &model, &tile, &inference, 1).unwrap();
        assert_eq!((map.height(), map.width()), (8, 8));
    }

    #[test]
    fn worker_count_does_not_change_the_result() {
        let model = small_model();
        let image = gen_clean(3, 96).unwrap();
        let tile = TileConfig { patch: 64, stride: 32 };
        let inference = InferenceConfig { t_star: 0, draws: 2, seed: 7 };
        let serial = score_image(&image, &model, &tile, &inference, 1).unwrap();
        let parallel = score_image(&image, &model, &tile, &inference, 4).unwrap();
        assert_eq!(serial.values(), parallel.values());
    }

    #[test]
    fn qc_produces_mask_with_threshold() {
        let model = small_model();
        let image = gen_clean(4, 64).unwrap();
        let tile = TileConfig { patch: 64, stride: 64 };
        let inference = InferenceConfig { t_star: 0, draws: 1, seed: 9 };
        let post = PostprocessConfig { v_min: 0.0, v_max: 5.0, ..Default::default() };
        let out = qc_image(&image, &model, &tile, &inference, &post, 1).unwrap();
        assert!(out.mask.threshold_used.is_finite());
        assert_eq!(out.mask.height(), out.heatmap.height());
    }

    #[test]
    fn quantiles_interpolate() {
        let values = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&values, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&values, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&values, 0.5).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn calibration_orders_bounds() {
        let scores: Vec<f64> = (0..1000).map(|k| k as f64 / 1000.0).collect();
        let (v_min, v_max) = calibrate_bounds(&scores).unwrap();
        assert!(v_min < v_max);
        // 99.5th percentile of the ramp, then doubled.
        assert!((v_min - 0.994005).abs() < 1e-9);
        assert!((v_max - 2.0 * v_min).abs() < 1e-12);
    }
}
