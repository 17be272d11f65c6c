//! Detection metrics against ground-truth masks: per-type sensitivity,
//! binary sensitivity / precision / F1, and AUROC.
//!
//! All metrics run on the mask cell grid. Ground-truth masks at pixel
//! resolution are reduced to the prediction grid by block coverage: a cell is
//! positive when at least half of its 8x8 pixel block is masked.

use crate::error::{Error, Result};
use crate::heatmap::ErrorHeatmap;
use crate::postprocess::ArtifactMask;
use crate::synth::{mask_path_for, read_manifest, ArtifactKind, PixelMask};
use std::fmt::Write as _;
use std::path::Path;

/// Fraction of a block that must be masked for the downsampled cell to count
/// as ground-truth artifact.
pub const GT_CELL_COVERAGE: f64 = 0.5;

/// Pixel-level confusion counts on the mask grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

/// Rates with the edge-case conventions: sensitivity is 1 when there are no
/// positives to find, precision is 1 when nothing was predicted, and F1 is 0
/// whenever there are no true positives.
pub fn rates_from_counts(c: &ConfusionCounts) -> (f64, f64, f64) {
    let sens = if c.true_pos + c.false_neg == 0 {
        1.0
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_neg) as f64
    };
    let prec = if c.true_pos + c.false_pos == 0 {
        1.0
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_pos) as f64
    };
    let f1 = if c.true_pos == 0 {
        0.0
    } else {
        2.0 * c.true_pos as f64 / (2 * c.true_pos + c.false_pos + c.false_neg) as f64
    };
    (sens, prec, f1)
}

/// Harmonic mean of sensitivity and precision; zero when both vanish.
pub fn f1_from(sens: f64, prec: f64) -> f64 {
    if sens + prec == 0.0 {
        0.0
    } else {
        2.0 * sens * prec / (sens + prec)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryMetrics {
    pub counts: ConfusionCounts,
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
}

fn ensure_same_dims(pred: &PixelMask, gt: &PixelMask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Shape(format!(
            "mask grids {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &PixelMask, gt: &PixelMask) -> Result<ConfusionCounts> {
    ensure_same_dims(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (p, g) in pred.cells().iter().zip(gt.cells()) {
        match (p, g) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

pub fn binary_metrics(pred: &PixelMask, gt: &PixelMask) -> Result<BinaryMetrics> {
    let counts = confusion(pred, gt)?;
    let (sensitivity, precision, f1) = rates_from_counts(&counts);
    Ok(BinaryMetrics { counts, sensitivity, precision, f1 })
}

/// Per-type detection sensitivity: for each type with a non-empty mask,
/// the covered fraction `|pred AND mask_type| / |mask_type|`. Types absent
/// from the sample are omitted.
pub fn per_type_sensitivity(
    pred: &PixelMask,
    type_masks: &[(ArtifactKind, PixelMask)],
) -> Result<Vec<(ArtifactKind, f64)>> {
    let mut out = Vec::new();
    for (kind, mask) in type_masks {
        ensure_same_dims(pred, mask)?;
        let total = mask.count_true();
        if total == 0 {
            continue;
        }
        let hit = pred
            .cells()
            .iter()
            .zip(mask.cells())
            .filter(|(p, g)| **p && **g)
            .count();
        out.push((*kind, hit as f64 / total as f64));
    }
    Ok(out)
}

/// Probability that a uniformly random positive cell outscores a uniformly
/// random negative cell, ties counted half (rank formulation).
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).expect("finite scores"));

    // Average ranks across tied score groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// AUROC of a heatmap against a same-sized ground-truth grid.
pub fn auroc_map(scores: &ErrorHeatmap, gt: &PixelMask) -> Result<f64> {
    if scores.height() != gt.height() || scores.width() != gt.width() {
        return Err(Error::Shape("heatmap and mask dims differ".into()));
    }
    auroc(scores.values(), gt.cells())
}

/// Reduce a pixel mask to the cell grid: cell (i, j) is positive when the
/// masked fraction of its `block x block` pixel area is at least
/// `min_coverage`. Trailing partial blocks are dropped, matching the heatmap
/// grid of an equally sized image.
pub fn downsample_mask(gt: &PixelMask, block: usize, min_coverage: f64) -> PixelMask {
    let ch = gt.height() / block;
    let cw = gt.width() / block;
    let mut out = PixelMask::new(ch, cw);
    let need = (min_coverage * (block * block) as f64).ceil() as usize;
    for i in 0..ch {
        for j in 0..cw {
            let mut count = 0;
            for y in 0..block {
                for x in 0..block {
                    if gt.get(i * block + y, j * block + x) {
                        count += 1;
                    }
                }
            }
            out.set(i, j, count >= need.max(1));
        }
    }
    out
}

/// View a thresholded artifact mask as a plain boolean grid.
pub fn cells_of(mask: &ArtifactMask) -> PixelMask {
    let mut out = PixelMask::new(mask.height(), mask.width());
    for i in 0..mask.height() {
        for j in 0..mask.width() {
            out.set(i, j, mask.get(i, j));
        }
    }
    out
}

/// Pooled and per-image metrics over an evaluated corpus.
#[derive(Debug, Clone)]
pub struct QCReport {
    pub images: usize,
    /// Micro-averaged (count-pooled) binary rates.
    pub sensitivity: f64,
    pub precision: f64,
    pub f1: f64,
    /// Cell-level AUROC pooled over all images; present only when every
    /// image had a score heatmap next to its predicted mask.
    pub auroc: Option<f64>,
    /// Per-image medians for robustness against outlier images.
    pub sensitivity_median: f64,
    pub precision_median: f64,
    pub f1_median: f64,
    /// Pooled per-type sensitivity in fixed type order, present types only.
    pub per_type_sensitivity: Vec<(ArtifactKind, f64)>,
    pub counts: ConfusionCounts,
}

impl QCReport {
    /// Key/value rendering with a fixed field order: images, the pooled
    /// binary rates, auroc (when available), the per-image medians, then
    /// per-type sensitivities in oof, penmark, fold, bubble order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "images\t{}", self.images).unwrap();
        writeln!(out, "sensitivity\t{:.6}", self.sensitivity).unwrap();
        writeln!(out, "precision\t{:.6}", self.precision).unwrap();
        writeln!(out, "f1\t{:.6}", self.f1).unwrap();
        if let Some(a) = self.auroc {
            writeln!(out, "auroc\t{a:.6}").unwrap();
        }
        writeln!(out, "sensitivity_median\t{:.6}", self.sensitivity_median).unwrap();
        writeln!(out, "precision_median\t{:.6}", self.precision_median).unwrap();
        writeln!(out, "f1_median\t{:.6}", self.f1_median).unwrap();
        for (kind, sens) in &self.per_type_sensitivity {
            writeln!(out, "sensitivity_{}\t{sens:.6}", kind.name()).unwrap();
        }
        out
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluate a directory of predicted masks against a ground-truth split.
///
/// `gt_dir` is a corpus split (images, `*_mask_*.png` files, manifest).
/// `pred_dir` holds one predicted mask image per manifest row, same file
/// name; an optional `<stem>.dqch` heatmap per row enables pooled AUROC.
/// Predictions may be at pixel resolution or on the 8x-downsampled cell
/// grid; ground truth is reduced to the prediction grid when needed.
pub fn evaluate_corpus(pred_dir: &Path, gt_dir: &Path) -> Result<QCReport> {
    let rows = read_manifest(gt_dir)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("empty manifest in {}", gt_dir.display())));
    }

    let mut pooled = ConfusionCounts::default();
    let mut per_image_sens = Vec::new();
    let mut per_image_prec = Vec::new();
    let mut per_image_f1 = Vec::new();
    let mut type_hits: Vec<(ArtifactKind, u64, u64)> = ArtifactKind::ALL
        .iter()
        .map(|k| (*k, 0u64, 0u64))
        .collect();
    let mut auroc_scores = Vec::new();
    let mut auroc_labels = Vec::new();
    let mut heatmaps_complete = true;

    for row in &rows {
        let pred_path = pred_dir.join(&row.file);
        if !pred_path.exists() {
            return Err(Error::Data(format!(
                "missing prediction for {}: {}",
                row.file,
                pred_path.display()
            )));
        }
        let pred_img = image::open(&pred_path)
            .map_err(|e| Error::image(&pred_path, e))?
            .to_luma8();
        let pred = PixelMask::from_gray(&pred_img);

        // Ground truth at pixel resolution; clean rows have an empty mask.
        let gt_pixels = match mask_path_for(gt_dir, row) {
            Some(path) => {
                let img = image::open(&path).map_err(|e| Error::image(&path, e))?.to_luma8();
                PixelMask::from_gray(&img)
            }
            None => {
                let img_path = gt_dir.join(&row.file);
                let img = image::open(&img_path)
                    .map_err(|e| Error::image(&img_path, e))?
                    .to_luma8();
                PixelMask::new(img.height() as usize, img.width() as usize)
            }
        };

        let gt = if gt_pixels.height() == pred.height() && gt_pixels.width() == pred.width() {
            gt_pixels
        } else if gt_pixels.height() / 8 == pred.height() && gt_pixels.width() / 8 == pred.width() {
            downsample_mask(&gt_pixels, 8, GT_CELL_COVERAGE)
        } else {
            return Err(Error::Shape(format!(
                "{}: prediction {}x{} matches neither pixel {}x{} nor cell grid",
                row.file,
                pred.height(),
                pred.width(),
                gt_pixels.height(),
                gt_pixels.width()
            )));
        };

        let metrics = binary_metrics(&pred, &gt)?;
        pooled.add(&metrics.counts);
        per_image_sens.push(metrics.sensitivity);
        per_image_prec.push(metrics.precision);
        per_image_f1.push(metrics.f1);

        if let Some(kind) = row.kind {
            let total = gt.count_true() as u64;
            if total > 0 {
                let hit = pred
                    .cells()
                    .iter()
                    .zip(gt.cells())
                    .filter(|(p, g)| **p && **g)
                    .count() as u64;
                let entry = type_hits.iter_mut().find(|(k, _, _)| *k == kind).unwrap();
                entry.1 += hit;
                entry.2 += total;
            }
        }

        let stem = row.file.strip_suffix(".png").unwrap_or(&row.file);
        let heatmap_path = pred_dir.join(format!("{stem}.dqch"));
        if heatmaps_complete && heatmap_path.exists() {
            let map = ErrorHeatmap::load_dqch(&heatmap_path)?;
            if map.height() == gt.height() && map.width() == gt.width() {
                auroc_scores.extend_from_slice(map.values());
                auroc_labels.extend_from_slice(gt.cells());
            } else {
                heatmaps_complete = false;
            }
        } else {
            heatmaps_complete = false;
        }
    }

    let (sensitivity, precision, f1) = rates_from_counts(&pooled);
    let auroc_value = if heatmaps_complete {
        auroc(&auroc_scores, &auroc_labels).ok()
    } else {
        None
    };
    let per_type = type_hits
        .into_iter()
        .filter(|(_, _, total)| *total > 0)
        .map(|(kind, hit, total)| (kind, hit as f64 / total as f64))
        .collect();

    Ok(QCReport {
        images: rows.len(),
        sensitivity,
        precision,
        f1,
        auroc: auroc_value,
        sensitivity_median: median(&mut per_image_sens),
        precision_median: median(&mut per_image_prec),
        f1_median: median(&mut per_image_f1),
        per_type_sensitivity: per_type,
        counts: pooled,
    })
}
