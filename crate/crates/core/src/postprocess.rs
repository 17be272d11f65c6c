//! Heatmap-to-mask conversion: Gaussian smoothing, bounded adaptive (Otsu)
//! thresholding with confident clamp bounds, and morphological
//! close-then-open cleanup.

use crate::error::{Error, Result};
use crate::heatmap::ErrorHeatmap;
use serde::{Deserialize, Serialize};

/// Post-processing settings.
///
/// `v_min` and `v_max` are the confident bounds on the heatmap scale: values
/// above `v_max` always end up flagged, values below `v_min` never push the
/// threshold down. They are fixed per run, adapting only the threshold
/// in between via the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    /// Gaussian smoothing standard deviation in heatmap cells.
    pub sigma: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Histogram bin count for threshold selection.
    pub bins: usize,
    /// Structuring-element radius in cells (square side 2r + 1).
    pub morph_radius: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig { sigma: 1.5, v_min: 0.2, v_max: 2.0, bins: 256, morph_radius: 1 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "confident bounds require v_min < v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("at least 2 histogram bins required".into()));
        }
        Ok(())
    }
}

/// Binary artifact decision map on the heatmap grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactMask {
    h: usize,
    w: usize,
    cells: Vec<bool>,
    pub threshold_used: f64,
    /// Config snapshot the mask was produced with.
    pub provenance: PostprocessConfig,
}

impl ArtifactMask {
    pub fn new(h: usize, w: usize) -> Self {
        ArtifactMask {
            h,
            w,
            cells: vec![false; h * w],
            threshold_used: f64::NAN,
            provenance: PostprocessConfig::default(),
        }
    }

    pub fn from_cells(h: usize, w: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != h * w {
            return Err(Error::Shape(format!(
                "mask cell count {} does not match {h}x{w}",
                cells.len()
            )));
        }
        Ok(ArtifactMask {
            h,
            w,
            cells,
            threshold_used: f64::NAN,
            provenance: PostprocessConfig::default(),
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.w + j] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count_true() as f64 / self.cells.len() as f64
    }

    /// 8-bit single-channel rendering: 0 = clean, 255 = artifact.
    pub fn to_gray(&self) -> image::GrayImage {
        let mut img = image::GrayImage::new(self.w as u32, self.h as u32);
        for (px, cell) in img.pixels_mut().zip(&self.cells) {
            px.0[0] = if *cell { 255 } else { 0 };
        }
        img
    }

    /// Read a mask image back; any nonzero pixel counts as artifact.
    pub fn from_gray(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let cells = img.pixels().map(|p| p.0[0] != 0).collect();
        ArtifactMask {
            h: h as usize,
            w: w as usize,
            cells,
            threshold_used: f64::NAN,
            provenance: PostprocessConfig::default(),
        }
    }
}

/// Separable Gaussian smoothing with the kernel truncated at 3 sigma,
/// renormalized to sum 1, and reflect padding at the borders (the edge cell
/// is repeated: index -1 maps to 0). `sigma = 0` returns the input unchanged.
pub fn gaussian_smooth(h: &ErrorHeatmap, sigma: f64) -> ErrorHeatmap {
    if sigma <= 0.0 {
        return h.clone();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in 0..=2 * radius {
        let d = k as f64 - radius as f64;
        kernel.push((-0.5 * (d / sigma) * (d / sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let (rows, cols) = (h.height(), h.width());
    let reflect = |idx: isize, len: usize| -> usize {
        // Repeated edge-inclusive reflection handles kernels wider than the map.
        let len = len as isize;
        let mut i = idx;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= len {
                i = 2 * len - 1 - i;
            } else {
                return i as usize;
            }
        }
    };

    // Horizontal pass.
    let mut tmp = ErrorHeatmap::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let jj = reflect(j as isize + k as isize - radius as isize, cols);
                acc += kv * h.get(i, jj);
            }
            tmp.set(i, j, acc);
        }
    }
    // Vertical pass.
    let mut out = ErrorHeatmap::zeros(rows, cols);
    out.origin = h.origin;
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let ii = reflect(i as isize + k as isize - radius as isize, rows);
                acc += kv * tmp.get(ii, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Bounded Otsu threshold.
///
/// Values are clamped into `[v_min, v_max]`, bucketed into `bins` equal-width
/// bins, and the bin boundary maximizing the between-class variance is
/// returned (ties resolved toward the lower threshold, class means taken at
/// bin centers). When every candidate split leaves one class empty — a
/// degenerate histogram — `v_max` is returned so the mask empties except for
/// cells above the confident upper bound.
pub fn otsu_bounded(h: &ErrorHeatmap, cfg: &PostprocessConfig) -> Result<f64> {
    cfg.validate()?;
    let bins = cfg.bins;
    let span = cfg.v_max - cfg.v_min;
    let mut hist = vec![0u64; bins];
    for v in h.values() {
        let clamped = v.clamp(cfg.v_min, cfg.v_max);
        let idx = (((clamped - cfg.v_min) / span) * bins as f64) as usize;
        hist[idx.min(bins - 1)] += 1;
    }

    let total: u64 = hist.iter().sum();
    let total_mean: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, n)| (b as f64 + 0.5) * *n as f64)
        .sum::<f64>();

    let mut best: Option<(f64, usize)> = None;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for split in 1..bins {
        w0 += hist[split - 1];
        sum0 += (split as f64 - 0.5) * hist[split - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (total_mean - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        // Strict comparison keeps the lowest maximizing split.
        if best.map_or(true, |(b, _)| between > b) {
            best = Some((between, split));
        }
    }

    match best {
        Some((_, split)) => Ok(cfg.v_min + span * split as f64 / bins as f64),
        None => Ok(cfg.v_max),
    }
}

fn dilate(cells: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let mut out = vec![false; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (i + dy, j + dx);
                    if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                        if cells[(y as usize) * w + x as usize] {
                            out[(i as usize) * w + j as usize] = true;
                            break 'win;
                        }
                    }
                }
            }
        }
    }
    out
}

fn erode(cells: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let mut out = vec![true; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (i + dy, j + dx);
                    // Erosion uses the adjoint border rule (outside counts as
                    // set); with false-padded erosion closing would not be
                    // extensive at the borders.
                    let inside = y >= 0 && y < h as isize && x >= 0 && x < w as isize;
                    if inside && !cells[(y as usize) * w + x as usize] {
                        out[(i as usize) * w + j as usize] = false;
                        break 'win;
                    }
                }
            }
        }
    }
    out
}

/// Morphological closing (dilate, erode) followed by opening (erode, dilate)
/// with a square structuring element of side 2 * radius + 1. Radius 0 is the
/// identity. Border rule: dilation treats cells outside the map as clear,
/// erosion as set — the adjoint pair, which keeps opening anti-extensive and
/// closing extensive on the finite grid.
pub fn morph_close_open(mask: &ArtifactMask, radius: usize) -> ArtifactMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let closed = erode(&dilate(mask.cells(), h, w, radius), h, w, radius);
    let opened = dilate(&erode(&closed, h, w, radius), h, w, radius);
    ArtifactMask {
        h,
        w,
        cells: opened,
        threshold_used: mask.threshold_used,
        provenance: mask.provenance,
    }
}

/// Full chain: smooth, bounded-Otsu threshold, compare, morphology. The
/// comparison is strict (`smoothed > threshold`), so the degenerate
/// `threshold = v_max` marks only cells above the confident upper bound.
pub fn binarize(h: &ErrorHeatmap, cfg: &PostprocessConfig) -> Result<ArtifactMask> {
    cfg.validate()?;
    let smoothed = gaussian_smooth(h, cfg.sigma);
    let threshold = otsu_bounded(&smoothed, cfg)?;
    let cells: Vec<bool> = smoothed.values().iter().map(|v| *v > threshold).collect();
    let mask = ArtifactMask {
        h: h.height(),
        w: h.width(),
        cells,
        threshold_used: threshold,
        provenance: *cfg,
    };
    Ok(morph_close_open(&mask, cfg.morph_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use proptest::prelude::*;

    fn heatmap_from(values: &[f64], h: usize, w: usize) -> ErrorHeatmap {
        ErrorHeatmap::from_vec(h, w, values.to_vec()).unwrap()
    }

    /// Dense 2D convolution oracle with reflect padding, no separability.
    fn smooth_oracle(h: &ErrorHeatmap, sigma: f64) -> ErrorHeatmap {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel = Vec::new();
        let mut sum = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let g = (-0.5 * ((dy * dy + dx * dx) as f64) / (sigma * sigma)).exp();
                kernel.push((dy, dx, g));
                sum += g;
            }
        }
        let reflect = |idx: isize, len: usize| -> usize {
            let len = len as isize;
            let mut i = idx;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= len {
                    i = 2 * len - 1 - i;
                } else {
                    return i as usize;
                }
            }
        };
        let mut out = ErrorHeatmap::zeros(h.height(), h.width());
        for i in 0..h.height() {
            for j in 0..h.width() {
                let mut acc = 0.0;
                for (dy, dx, g) in &kernel {
                    let y = reflect(i as isize + dy, h.height());
                    let x = reflect(j as isize + dx, h.width());
                    acc += g / sum * h.get(y, x);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Exhaustive between-class variance search over all bin boundaries.
    fn otsu_oracle(h: &ErrorHeatmap, cfg: &PostprocessConfig) -> f64 {
        let bins = cfg.bins;
        let span = cfg.v_max - cfg.v_min;
        let mut hist = vec![0u64; bins];
        for v in h.values() {
            let c = v.clamp(cfg.v_min, cfg.v_max);
            let idx = (((c - cfg.v_min) / span) * bins as f64) as usize;
            hist[idx.min(bins - 1)] += 1;
        }
        let mut best_split = None;
        let mut best_var = f64::NEG_INFINITY;
        for split in 1..bins {
            let w0: u64 = hist[..split].iter().sum();
            let w1: u64 = hist[split..].iter().sum();
            if w0 == 0 || w1 == 0 {
                continue;
            }
            let mu0: f64 = hist[..split]
                .iter()
                .enumerate()
                .map(|(b, n)| (b as f64 + 0.5) * *n as f64)
                .sum::<f64>()
                / w0 as f64;
            let mu1: f64 = hist[split..]
                .iter()
                .enumerate()
                .map(|(b, n)| ((split + b) as f64 + 0.5) * *n as f64)
                .sum::<f64>()
                / w1 as f64;
            let between = w0 as f64 * w1 as f64 * (mu0 - mu1) * (mu0 - mu1);
            if between > best_var {
                best_var = between;
                best_split = Some(split);
            }
        }
        match best_split {
            Some(split) => cfg.v_min + span * split as f64 / bins as f64,
            None => cfg.v_max,
        }
    }

    fn brute_dilate(m: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for i in 0..h {
            for j in 0..w {
                if !m[i * w + j] {
                    continue;
                }
                for y in i.saturating_sub(r)..(i + r + 1).min(h) {
                    for x in j.saturating_sub(r)..(j + r + 1).min(w) {
                        out[y * w + x] = true;
                    }
                }
            }
        }
        out
    }

    fn brute_erode(m: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
        // Out-of-bounds cells count as set (adjoint border rule).
        let mut out = vec![false; h * w];
        let r = r as isize;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut all = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (i + dy, j + dx);
                        let inside = y >= 0 && y < h as isize && x >= 0 && x < w as isize;
                        if inside && !m[(y as usize) * w + x as usize] {
                            all = false;
                        }
                    }
                }
                out[(i as usize) * w + j as usize] = all;
            }
        }
        out
    }

    fn brute_close_open(m: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
        let closed = brute_erode(&brute_dilate(m, h, w, r), h, w, r);
        brute_dilate(&brute_erode(&closed, h, w, r), h, w, r)
    }

    #[test]
    fn constant_heatmap_is_unchanged_by_smoothing() {
        let h = heatmap_from(&[3.25; 63], 7, 9);
        let s = gaussian_smooth(&h, 2.0);
        for v in s.values() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_zero_is_identity() {
        let mut h = ErrorHeatmap::zeros(4, 4);
        let mut s = Stream::new(1);
        for v in h.values_mut() {
            *v = s.next_uniform();
        }
        assert_eq!(gaussian_smooth(&h, 0.0), h);
    }

    #[test]
    fn impulse_response_matches_dense_convolution_oracle() {
        let mut h = ErrorHeatmap::zeros(9, 9);
        h.set(4, 4, 1.0);
        let got = gaussian_smooth(&h, 1.0);
        let want = smooth_oracle(&h, 1.0);
        for (a, b) in got.values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bimodal_heatmap_separates_the_two_modes() {
        // Half the mass at v_min, half at v_max: every interior split yields
        // the same between-class variance, so the tie rule picks the lowest
        // boundary. Any of them classifies the two modes identically.
        let cfg = PostprocessConfig { v_min: 0.0, v_max: 1.0, bins: 64, ..Default::default() };
        let mut values = vec![0.0; 32];
        values.extend(vec![1.0; 32]);
        let h = heatmap_from(&values, 8, 8);
        let threshold = otsu_bounded(&h, &cfg).unwrap();
        let oracle = otsu_oracle(&h, &cfg);
        assert_eq!(threshold, oracle);
        assert!(threshold > 0.0 && threshold < 1.0);
        assert!(values.iter().all(|v| (*v > threshold) == (*v == 1.0)));
    }

    #[test]
    fn constant_heatmap_degenerates_to_v_max_and_empty_mask() {
        let cfg = PostprocessConfig { v_min: 0.0, v_max: 1.0, ..Default::default() };
        let h = heatmap_from(&[0.4; 36], 6, 6);
        assert_eq!(otsu_bounded(&h, &cfg).unwrap(), 1.0);
        let mask = binarize(&h, &cfg).unwrap();
        assert_eq!(mask.count_true(), 0);
    }

    #[test]
    fn values_above_v_max_are_always_flagged() {
        // Mixed map: some baseline noise plus cells beyond the upper bound.
        let cfg = PostprocessConfig {
            v_min: 0.0,
            v_max: 1.0,
            sigma: 0.0,
            morph_radius: 0,
            ..Default::default()
        };
        let mut s = Stream::new(5);
        let mut values: Vec<f64> = (0..100).map(|_| s.next_uniform() * 0.3).collect();
        values[7] = 5.0;
        values[55] = 2.0;
        let h = heatmap_from(&values, 10, 10);
        let threshold = otsu_bounded(&h, &cfg).unwrap();
        assert!(threshold < cfg.v_max);
        let mask = binarize(&h, &cfg).unwrap();
        assert!(mask.cells()[7]);
        assert!(mask.cells()[55]);
    }

    #[test]
    fn otsu_matches_exhaustive_search_on_random_heatmaps() {
        let mut s = Stream::new(77);
        for case in 0..50 {
            let cfg = PostprocessConfig {
                v_min: 0.0,
                v_max: 1.0,
                bins: 32 + (case % 5) * 16,
                ..Default::default()
            };
            let values: Vec<f64> = (0..64).map(|_| s.next_uniform() * 1.4 - 0.2).collect();
            let h = heatmap_from(&values, 8, 8);
            let got = otsu_bounded(&h, &cfg).unwrap();
            let want = otsu_oracle(&h, &cfg);
            assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn isolated_cell_is_removed_by_opening() {
        let mut mask = ArtifactMask::new(5, 5);
        mask.set(2, 2, true);
        let out = morph_close_open(&mask, 1);
        assert_eq!(out.count_true(), 0);
    }

    #[test]
    fn hole_in_solid_block_is_filled_by_closing() {
        let mut mask = ArtifactMask::new(9, 9);
        for i in 1..8 {
            for j in 1..8 {
                mask.set(i, j, true);
            }
        }
        mask.set(4, 4, false);
        let out = morph_close_open(&mask, 1);
        let want = brute_close_open(mask.cells(), 9, 9, 1);
        assert_eq!(out.cells(), &want[..]);
        assert!(out.get(4, 4), "hole should be filled");
    }

    #[test]
    fn morphology_matches_brute_force_on_random_masks() {
        let mut s = Stream::new(123);
        for case in 0..100 {
            let h = 4 + s.next_index(13);
            let w = 4 + s.next_index(13);
            let radius = s.next_index(3);
            let cells: Vec<bool> = (0..h * w).map(|_| s.next_uniform() < 0.4).collect();
            let mask = ArtifactMask::from_cells(h, w, cells.clone()).unwrap();
            let got = morph_close_open(&mask, radius);
            let want = brute_close_open(&cells, h, w, radius);
            assert_eq!(got.cells(), &want[..], "case {case} ({h}x{w}, r={radius})");
        }
    }

    #[test]
    fn binarize_block_heatmap_recovers_the_block() {
        let cfg = PostprocessConfig {
            v_min: 0.05,
            v_max: 1.0,
            sigma: 0.0,
            morph_radius: 1,
            ..Default::default()
        };
        let mut h = ErrorHeatmap::zeros(20, 20);
        for i in 7..13 {
            for j in 7..13 {
                h.set(i, j, 1.0);
            }
        }
        let mask = binarize(&h, &cfg).unwrap();
        // Interior must be flagged; far corners must stay clean.
        for i in 8..12 {
            for j in 8..12 {
                assert!(mask.get(i, j));
            }
        }
        assert_eq!(mask.get(0, 0), false);
        assert!(mask.count_true() >= 16 && mask.count_true() <= 36);
    }

    #[test]
    fn binarize_without_smoothing_or_morphology_is_pure_thresholding() {
        let cfg = PostprocessConfig {
            v_min: 0.0,
            v_max: 1.0,
            sigma: 0.0,
            morph_radius: 0,
            ..Default::default()
        };
        let mut s = Stream::new(9);
        let values: Vec<f64> = (0..144).map(|_| s.next_uniform()).collect();
        let h = heatmap_from(&values, 12, 12);
        let mask = binarize(&h, &cfg).unwrap();
        let threshold = mask.threshold_used;
        for (cell, v) in mask.cells().iter().zip(h.values()) {
            assert_eq!(*cell, *v > threshold);
        }
    }

    #[test]
    fn all_zero_heatmap_with_positive_v_min_gives_empty_mask() {
        let cfg = PostprocessConfig { v_min: 0.1, v_max: 1.0, ..Default::default() };
        let h = ErrorHeatmap::zeros(8, 8);
        let mask = binarize(&h, &cfg).unwrap();
        assert_eq!(mask.count_true(), 0);
    }

    #[test]
    fn mask_gray_round_trip() {
        let mut mask = ArtifactMask::new(3, 4);
        mask.set(1, 2, true);
        mask.set(0, 0, true);
        let img = mask.to_gray();
        assert_eq!(img.get_pixel(2, 1).0[0], 255);
        assert_eq!(img.get_pixel(1, 1).0[0], 0);
        let back = ArtifactMask::from_gray(&img);
        assert_eq!(back.cells(), mask.cells());
    }

    proptest! {
        #[test]
        fn opening_and_closing_are_idempotent_and_ordered(
            seed in 0u64..500,
            h in 3usize..12,
            w in 3usize..12,
            radius in 0usize..3,
        ) {
            let mut s = Stream::new(seed);
            let cells: Vec<bool> = (0..h * w).map(|_| s.next_uniform() < 0.5).collect();
            let (hh, ww) = (h, w);
            let open = |c: &[bool]| {
                let e = brute_erode(c, hh, ww, radius);
                brute_dilate(&e, hh, ww, radius)
            };
            let close = |c: &[bool]| {
                let d = brute_dilate(c, hh, ww, radius);
                brute_erode(&d, hh, ww, radius)
            };
            let o1 = open(&cells);
            let o2 = open(&o1);
            prop_assert_eq!(&o1, &o2);
            let c1 = close(&cells);
            let c2 = close(&c1);
            prop_assert_eq!(&c1, &c2);
            // Opening is anti-extensive, closing extensive.
            for k in 0..h * w {
                prop_assert!(!o1[k] || cells[k]);
                prop_assert!(!cells[k] || c1[k]);
            }
        }

        #[test]
        fn otsu_threshold_stays_in_bounds_and_tracks_exact_shifts(
            seed in 0u64..300,
            delta_bins in 0usize..40,
        ) {
            let mut s = Stream::new(seed);
            let cfg = PostprocessConfig { v_min: 0.0, v_max: 1.0, ..Default::default() };
            let bin_width = (cfg.v_max - cfg.v_min) / cfg.bins as f64;

            // Arbitrary data: the threshold always lands inside the bounds.
            let raw: Vec<f64> = (0..64).map(|_| s.next_uniform() * 1.5 - 0.2).collect();
            let h_raw = ErrorHeatmap::from_vec(8, 8, raw).unwrap();
            let t_raw = otsu_bounded(&h_raw, &cfg).unwrap();
            prop_assert!(t_raw >= cfg.v_min && t_raw <= cfg.v_max);

            // Exact translation: values on bin centers, shift a whole number
            // of bins, nothing clamped. The histogram translates verbatim, so
            // the selected boundary moves by exactly the shift.
            let delta = delta_bins as f64 * bin_width;
            let values: Vec<f64> = (0..64)
                .map(|_| (s.next_index(cfg.bins - 40) as f64 + 0.5) * bin_width)
                .collect();
            let h = ErrorHeatmap::from_vec(8, 8, values.clone()).unwrap();
            let t0 = otsu_bounded(&h, &cfg).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + delta).collect();
            let hs = ErrorHeatmap::from_vec(8, 8, shifted).unwrap();
            let t1 = otsu_bounded(&hs, &cfg).unwrap();
            if t0 < cfg.v_max {
                prop_assert!((t1 - (t0 + delta)).abs() < 1e-9, "t0 {t0} t1 {t1} delta {delta}");
            }
        }
    }
}
