//! Deterministic synthetic corpora: procedural clean textures plus four
//! artifact types with per-sample ground-truth masks.
//!
//! Clean samples are multi-octave value noise in a purple/pink palette with
//! soft elliptical blobs. Artifact samples start from a clean sample and
//! apply one defect: a blurred region (oof), an opaque ink polyline
//! (penmark), a darkened band of shifted texture (fold), or a bright ring
//! with a lightened interior (bubble). Everything is a pure function of the
//! sample seed; masks cover exactly the modified pixels.

use crate::codec::ImagePatch;
use crate::error::{Error, Result};
use crate::rng::{derive, mix64, Stream};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// Sub-stream labels off the corpus seed, one per split.
const TRAIN_CLEAN_STREAM: u64 = 1;
const TRAIN_ARTIFACT_STREAM: u64 = 2;
const TEST_CLEAN_STREAM: u64 = 3;
const TEST_ARTIFACT_STREAM: u64 = 4;

/// Amplitude of the fixed-pattern scan grain in [0, 1] pixel units.
const SCAN_GRAIN: f64 = 0.22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Oof,
    Penmark,
    Fold,
    Bubble,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] =
        [ArtifactKind::Oof, ArtifactKind::Penmark, ArtifactKind::Fold, ArtifactKind::Bubble];

    pub fn name(&self) -> &'static str {
        match self {
            ArtifactKind::Oof => "oof",
            ArtifactKind::Penmark => "penmark",
            ArtifactKind::Fold => "fold",
            ArtifactKind::Bubble => "bubble",
        }
    }

    pub fn parse(s: &str) -> Option<ArtifactKind> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }
}

/// Mixing proportions over the artifact types; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactMix {
    pub oof: f64,
    pub penmark: f64,
    pub fold: f64,
    pub bubble: f64,
}

impl Default for ArtifactMix {
    fn default() -> Self {
        ArtifactMix { oof: 0.25, penmark: 0.25, fold: 0.25, bubble: 0.25 }
    }
}

impl ArtifactMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.oof, self.penmark, self.fold, self.bubble];
        if parts.iter().any(|p| *p < 0.0) {
            return Err(Error::Config("artifact mix proportions must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("artifact mix must sum to 1, got {sum}")));
        }
        Ok(())
    }

    pub fn sample(&self, u: f64) -> ArtifactKind {
        let mut acc = 0.0;
        for (kind, p) in ArtifactKind::ALL
            .iter()
            .zip([self.oof, self.penmark, self.fold, self.bubble])
        {
            acc += p;
            if u < acc {
                return *kind;
            }
        }
        ArtifactKind::Bubble
    }
}

/// Corpus generation settings: sample counts per split, image side length,
/// artifact mix, and the target artifact area band as a fraction of the
/// image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub size: usize,
    pub train_clean: usize,
    pub train_artifact: usize,
    pub test_clean: usize,
    pub test_artifact: usize,
    pub mix: ArtifactMix,
    pub area_lo: f64,
    pub area_hi: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 20_24,
            size: 128,
            train_clean: 2000,
            train_artifact: 400,
            test_clean: 120,
            test_artifact: 120,
            mix: ArtifactMix::default(),
            area_lo: 0.12,
            area_hi: 0.38,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 8 != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of 8",
                self.size
            )));
        }
        if !(self.area_lo > 0.0 && self.area_lo <= self.area_hi && self.area_hi < 1.0) {
            return Err(Error::Config(format!(
                "artifact area band [{}, {}] must satisfy 0 < lo <= hi < 1",
                self.area_lo, self.area_hi
            )));
        }
        self.mix.validate()
    }
}

/// Pixel-resolution boolean mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    h: usize,
    w: usize,
    cells: Vec<bool>,
}

impl PixelMask {
    pub fn new(h: usize, w: usize) -> Self {
        PixelMask { h, w, cells: vec![false; h * w] }
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

    pub fn to_gray(&self) -> image::GrayImage {
        let mut img = image::GrayImage::new(self.w as u32, self.h as u32);
        for (px, cell) in img.pixels_mut().zip(&self.cells) {
            px.0[0] = if *cell { 255 } else { 0 };
        }
        img
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        PixelMask {
            h: h as usize,
            w: w as usize,
            cells: img.pixels().map(|p| p.0[0] != 0).collect(),
        }
    }
}

/// A generated sample: the image, the artifact type it carries, and the
/// ground-truth mask of modified pixels. A sample carries exactly one
/// artifact type, so the union mask equals the per-type mask.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: ImagePatch,
    pub kind: ArtifactKind,
    pub mask: PixelMask,
}

// ------------------------------------------------------------------
// Value noise
// ------------------------------------------------------------------

fn lattice_value(seed: u64, xi: i64, yi: i64) -> f64 {
    let h = mix64(mix64(seed ^ (xi as u64).wrapping_mul(0x9E3779B97F4A7C15))
        ^ (yi as u64).wrapping_mul(0xC2B2AE3D27D4EB4F));
    ((h >> 11) as f64) * (1.0 / 9007199254740992.0)
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let xi = x.floor() as i64;
    let yi = y.floor() as i64;
    let xf = x - xi as f64;
    let yf = y - yi as f64;
    let v00 = lattice_value(seed, xi, yi);
    let v10 = lattice_value(seed, xi + 1, yi);
    let v01 = lattice_value(seed, xi, yi + 1);
    let v11 = lattice_value(seed, xi + 1, yi + 1);
    let u = fade(xf);
    let v = fade(yf);
    let top = v00 + (v10 - v00) * u;
    let bottom = v01 + (v11 - v01) * u;
    top + (bottom - top) * v
}

fn fbm(seed: u64, x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    let mut norm = 0.0;
    for octave in 0..4u64 {
        sum += amp * value_noise(derive(seed, octave), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Generate a clean texture patch.
///
/// The texture is a two-tone mosaic: a hard threshold of value noise at a
/// feature scale of roughly 10-20 px picks between a light pink tone and a
/// dark purple tone, with the dark fraction drifting smoothly (multi-octave
/// noise plus soft elliptical blobs) and sparse nucleus dots on top. A
/// fixed scan grain rides on everything: a period-8 luminance square wave
/// locked to absolute pixel rows, like the fixed-pattern banding of a line
/// scanner. Because the grain is identical in every clean image, the block
/// encoder maps it to a constant latent offset that any predictor can learn
/// exactly; content that attenuates or displaces it (blurring, opaque ink,
/// duplicated shifted texture, brightening) lands measurably off the clean
/// latent distribution. Deterministic per (seed, size).
pub fn gen_clean(seed: u64, size: usize) -> Result<ImagePatch> {
    if size == 0 || size % 8 != 0 {
        return Err(Error::Config(format!("size {size} must be a positive multiple of 8")));
    }
    let mut stream = Stream::new(derive(seed, 0xC1EA));
    let ratio_seed = stream.next_u64();
    let stipple_seed = stream.next_u64();
    let jitter_seed = stream.next_u64();
    // Small per-image palette jitter keeps seeds visually distinct.
    let light = [
        0.93 - 0.04 * stream.next_uniform(),
        0.82 - 0.05 * stream.next_uniform(),
        0.88 - 0.04 * stream.next_uniform(),
    ];
    let dark = [
        0.50 + 0.06 * stream.next_uniform(),
        0.30 + 0.05 * stream.next_uniform(),
        0.56 + 0.06 * stream.next_uniform(),
    ];
    let nucleus_tone = [0.24, 0.10, 0.40];

    struct Blob {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        cos_t: f64,
        sin_t: f64,
        strength: f64,
    }
    let blob_count = 6 + stream.next_index(7);
    let blobs: Vec<Blob> = (0..blob_count)
        .map(|_| {
            let theta = stream.next_range(0.0, std::f64::consts::PI);
            Blob {
                cx: stream.next_range(0.1, 0.9) * size as f64,
                cy: stream.next_range(0.1, 0.9) * size as f64,
                rx: stream.next_range(0.08, 0.22) * size as f64,
                ry: stream.next_range(0.08, 0.22) * size as f64,
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                strength: stream.next_range(0.2, 0.4),
            }
        })
        .collect();

    struct Dot {
        cx: f64,
        cy: f64,
        radius: f64,
    }
    let dot_count = ((size * size) as f64 / 700.0 * stream.next_range(0.8, 1.2)) as usize;
    let dots: Vec<Dot> = (0..dot_count)
        .map(|_| Dot {
            cx: stream.next_range(0.0, 1.0) * size as f64,
            cy: stream.next_range(0.0, 1.0) * size as f64,
            radius: stream.next_range(1.6, 3.2),
        })
        .collect();
    // Coarse bucket grid so each pixel only tests nearby dots.
    let grid_cell = 8.0;
    let grid_dim = (size as f64 / grid_cell).ceil() as usize;
    let mut dot_grid: Vec<Vec<usize>> = vec![Vec::new(); grid_dim * grid_dim];
    for (idx, d) in dots.iter().enumerate() {
        let reach = d.radius + 1.0;
        let g0 = (((d.cy - reach) / grid_cell).floor().max(0.0)) as usize;
        let g1 = (((d.cy + reach) / grid_cell).floor()).min(grid_dim as f64 - 1.0) as usize;
        let h0 = (((d.cx - reach) / grid_cell).floor().max(0.0)) as usize;
        let h1 = (((d.cx + reach) / grid_cell).floor()).min(grid_dim as f64 - 1.0) as usize;
        for gy in g0..=g1 {
            for gx in h0..=h1 {
                dot_grid[gy * grid_dim + gx].push(idx);
            }
        }
    }

    let coarse = 5.0 / size as f64;
    let feature = 1.0 / 14.0; // mosaic feature size around 10-20 px
    let mut patch = ImagePatch::new(size, size);
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64, r as f64);
            // Smoothly drifting dark-fraction, biased upward inside blobs.
            let mut ratio = 0.25 + 0.45 * fbm(ratio_seed, x * coarse, y * coarse);
            for b in &blobs {
                let dx = x - b.cx;
                let dy = y - b.cy;
                let u = (dx * b.cos_t + dy * b.sin_t) / b.rx;
                let v = (-dx * b.sin_t + dy * b.cos_t) / b.ry;
                let q = u * u + v * v;
                if q < 1.0 {
                    ratio += (1.0 - q) * b.strength;
                }
            }
            // Hard two-tone threshold: no intermediate colors in clean data.
            let mosaic = value_noise(stipple_seed, x * feature, y * feature);
            let mut color = if mosaic < ratio.clamp(0.05, 0.9) { dark } else { light };

            let gy = ((r as f64 / grid_cell) as usize).min(grid_dim - 1);
            let gx = ((c as f64 / grid_cell) as usize).min(grid_dim - 1);
            for &idx in &dot_grid[gy * grid_dim + gx] {
                let d = &dots[idx];
                let dist = ((x - d.cx).powi(2) + (y - d.cy).powi(2)).sqrt();
                if dist < d.radius {
                    color = nucleus_tone;
                }
            }

            // Fixed-pattern scan grain: period-8 square wave on pixel rows,
            // identical across every clean image.
            let grain = if r % 8 < 4 { SCAN_GRAIN } else { -SCAN_GRAIN };
            // Per-pixel micro jitter inside the chosen tone cluster.
            let jitter =
                (lattice_value(jitter_seed, r as i64, c as i64) - 0.5) * 0.05;
            for ch in 0..3 {
                patch.set(r, c, ch, color[ch] + grain + jitter);
            }
        }
    }
    Ok(patch)
}

// ------------------------------------------------------------------
// Artifact rendering
// ------------------------------------------------------------------

/// Separable Gaussian blur of an RGB patch with reflect padding.
fn blur_patch(src: &ImagePatch, sigma: f64) -> ImagePatch {
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
    let (h, w) = (src.height(), src.width());
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
    let mut tmp = ImagePatch::new(h, w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let cc = reflect(c as isize + k as isize - radius as isize, w);
                    acc += kv * src.get(r, cc, ch);
                }
                tmp.set(r, c, ch, acc);
            }
        }
    }
    let mut out = ImagePatch::new(h, w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let rr = reflect(r as isize + k as isize - radius as isize, h);
                    acc += kv * tmp.get(rr, c, ch);
                }
                out.set(r, c, ch, acc);
            }
        }
    }
    out
}

/// Search a shape scale whose mask area lands inside [lo, hi]. `mask_of`
/// must be monotone non-decreasing in the scale.
fn fit_scale<F: Fn(f64) -> PixelMask>(
    mask_of: F,
    total: f64,
    lo: f64,
    hi: f64,
) -> (f64, PixelMask) {
    let target = 0.5 * (lo + hi);
    let mut low = 0.02;
    let mut high = 12.0;
    let mut best = mask_of(1.0);
    let mut best_scale = 1.0;
    for _ in 0..40 {
        let frac = best.count_true() as f64 / total;
        if frac >= lo && frac <= hi {
            return (best_scale, best);
        }
        if frac < target {
            low = best_scale;
        } else {
            high = best_scale;
        }
        best_scale = 0.5 * (low + high);
        best = mask_of(best_scale);
    }
    (best_scale, best)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos_t: f64,
    sin_t: f64,
}

impl Ellipse {
    /// Normalized squared radius; < 1 means inside.
    fn q(&self, x: f64, y: f64, scale: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos_t + dy * self.sin_t) / (self.rx * scale);
        let v = (-dx * self.sin_t + dy * self.cos_t) / (self.ry * scale);
        u * u + v * v
    }

    fn mask(&self, size: usize, scale: f64) -> PixelMask {
        let mut mask = PixelMask::new(size, size);
        for r in 0..size {
            for c in 0..size {
                if self.q(c as f64, r as f64, scale) < 1.0 {
                    mask.set(r, c, true);
                }
            }
        }
        mask
    }
}

fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let abx = bx - ax;
    let aby = by - ay;
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        (((px - ax) * abx + (py - ay) * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = px - (ax + t * abx);
    let dy = py - (ay + t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Generate an artifact sample of the requested kind on top of the seed's
/// clean texture. The mask area fraction is driven into [area_lo, area_hi]
/// by scaling the shape.
pub fn gen_artifact(
    seed: u64,
    size: usize,
    kind: ArtifactKind,
    area_lo: f64,
    area_hi: f64,
) -> Result<LabeledSample> {
    if !(area_lo > 0.0 && area_lo <= area_hi && area_hi < 1.0) {
        return Err(Error::Config(format!(
            "artifact area band [{area_lo}, {area_hi}] must satisfy 0 < lo <= hi < 1"
        )));
    }
    let clean = gen_clean(seed, size)?;
    let mut stream = Stream::new(derive(seed, 0xA87));
    let total = (size * size) as f64;
    let fsize = size as f64;

    let (image, mask) = match kind {
        ArtifactKind::Oof => {
            let theta = stream.next_range(0.0, std::f64::consts::PI);
            let ellipse = Ellipse {
                cx: stream.next_range(0.25, 0.75) * fsize,
                cy: stream.next_range(0.25, 0.75) * fsize,
                rx: stream.next_range(0.16, 0.30) * fsize,
                ry: stream.next_range(0.16, 0.30) * fsize,
                cos_t: theta.cos(),
                sin_t: theta.sin(),
            };
            let (scale, mask) = fit_scale(|s| ellipse.mask(size, s), total, area_lo, area_hi);
            let blurred = blur_patch(&clean, 4.0);
            let mut image = clean.clone();
            for r in 0..size {
                for c in 0..size {
                    let q = ellipse.q(c as f64, r as f64, scale);
                    if q < 1.0 {
                        // Soft feather toward the boundary, fully blurred in
                        // the core; support stays exactly the mask.
                        let w = ((1.0 - q) / 0.15).clamp(0.0, 1.0);
                        for ch in 0..3 {
                            let v = w * blurred.get(r, c, ch) + (1.0 - w) * clean.get(r, c, ch);
                            image.set(r, c, ch, v);
                        }
                    }
                }
            }
            (image, mask)
        }
        ArtifactKind::Penmark => {
            let inks = [[0.08, 0.14, 0.62], [0.09, 0.46, 0.20], [0.05, 0.05, 0.09]];
            let ink = inks[stream.next_index(inks.len())];
            let points = 3 + stream.next_index(3);
            let base_thickness = stream.next_range(8.0, 24.0);
            let start = (
                stream.next_range(0.15, 0.85) * fsize,
                stream.next_range(0.15, 0.85) * fsize,
            );
            let legs: Vec<(f64, f64)> = (0..points - 1)
                .map(|_| {
                    let angle = stream.next_range(0.0, std::f64::consts::TAU);
                    let len = stream.next_range(0.25, 0.55) * fsize;
                    (angle.cos() * len, angle.sin() * len)
                })
                .collect();
            let polyline = |scale: f64| -> Vec<(f64, f64)> {
                let mut pts = vec![start];
                for (dx, dy) in &legs {
                    let (px, py) = *pts.last().unwrap();
                    let x = (px + dx * scale).clamp(2.0, fsize - 3.0);
                    let y = (py + dy * scale).clamp(2.0, fsize - 3.0);
                    pts.push((x, y));
                }
                pts
            };
            let mask_of = |scale: f64| -> PixelMask {
                let pts = polyline(scale);
                let half = (base_thickness * scale).clamp(8.0, 24.0) / 2.0;
                let mut mask = PixelMask::new(size, size);
                for r in 0..size {
                    for c in 0..size {
                        let (px, py) = (c as f64, r as f64);
                        let hit = pts.windows(2).any(|seg| {
                            dist_to_segment(px, py, seg[0].0, seg[0].1, seg[1].0, seg[1].1) <= half
                        });
                        if hit {
                            mask.set(r, c, true);
                        }
                    }
                }
                mask
            };
            let (_, mask) = fit_scale(mask_of, total, area_lo, area_hi);
            let mut image = clean.clone();
            for r in 0..size {
                for c in 0..size {
                    if mask.get(r, c) {
                        for ch in 0..3 {
                            image.set(r, c, ch, ink[ch]);
                        }
                    }
                }
            }
            (image, mask)
        }
        ArtifactKind::Fold => {
            let theta = stream.next_range(0.0, std::f64::consts::PI);
            let (nx, ny) = (theta.cos(), theta.sin());
            let cx = stream.next_range(0.3, 0.7) * fsize;
            let cy = stream.next_range(0.3, 0.7) * fsize;
            let base_half_width = stream.next_range(8.0, 18.0);
            let shift_mag = stream.next_range(10.0, 25.0);
            // Texture duplication shift runs along the band.
            let (sx, sy) = (-ny * shift_mag, nx * shift_mag);
            let mask_of = |scale: f64| -> PixelMask {
                let half = base_half_width * scale;
                let mut mask = PixelMask::new(size, size);
                for r in 0..size {
                    for c in 0..size {
                        let d = (c as f64 - cx) * nx + (r as f64 - cy) * ny;
                        if d.abs() < half {
                            mask.set(r, c, true);
                        }
                    }
                }
                mask
            };
            let (_, mask) = fit_scale(mask_of, total, area_lo, area_hi);
            let mut image = clean.clone();
            for r in 0..size {
                for c in 0..size {
                    if mask.get(r, c) {
                        let src_c = ((c as f64 + sx).round() as isize).clamp(0, size as isize - 1);
                        let src_r = ((r as f64 + sy).round() as isize).clamp(0, size as isize - 1);
                        for ch in 0..3 {
                            let v = clean.get(src_r as usize, src_c as usize, ch) * 0.6;
                            image.set(r, c, ch, v);
                        }
                    }
                }
            }
            (image, mask)
        }
        ArtifactKind::Bubble => {
            let cx = stream.next_range(0.3, 0.7) * fsize;
            let cy = stream.next_range(0.3, 0.7) * fsize;
            let base_radius = stream.next_range(0.12, 0.24) * fsize;
            let mask_of = |scale: f64| -> PixelMask {
                let radius = base_radius * scale;
                let ring = (0.12 * radius).max(2.5);
                let mut mask = PixelMask::new(size, size);
                for r in 0..size {
                    for c in 0..size {
                        let d = ((c as f64 - cx).powi(2) + (r as f64 - cy).powi(2)).sqrt();
                        if d < radius + ring {
                            mask.set(r, c, true);
                        }
                    }
                }
                mask
            };
            let (scale, mask) = fit_scale(mask_of, total, area_lo, area_hi);
            let radius = base_radius * scale;
            let ring = (0.12 * radius).max(2.5);
            let mut image = clean.clone();
            for r in 0..size {
                for c in 0..size {
                    let d = ((c as f64 - cx).powi(2) + (r as f64 - cy).powi(2)).sqrt();
                    if d < radius + ring {
                        let mix = if (d - radius).abs() < ring {
                            // Bright rim.
                            0.85
                        } else {
                            // Lightened interior.
                            0.35
                        };
                        for ch in 0..3 {
                            let v = clean.get(r, c, ch) * (1.0 - mix) + mix;
                            image.set(r, c, ch, v);
                        }
                    }
                }
            }
            (image, mask)
        }
    };

    Ok(LabeledSample { image, kind, mask })
}

// ------------------------------------------------------------------
// On-disk corpus layout
// ------------------------------------------------------------------

/// One manifest record: file name, sample type, generation seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub file: String,
    pub kind: Option<ArtifactKind>,
    pub seed: u64,
}

pub const SPLIT_DIRS: [&str; 4] = ["train_clean", "train_artifact", "test_clean", "test_artifact"];

fn split_stream_label(split: &str) -> u64 {
    match split {
        "train_clean" => TRAIN_CLEAN_STREAM,
        "train_artifact" => TRAIN_ARTIFACT_STREAM,
        "test_clean" => TEST_CLEAN_STREAM,
        _ => TEST_ARTIFACT_STREAM,
    }
}

fn mask_file_name(stem: &str, kind: ArtifactKind) -> String {
    format!("{stem}_mask_{}.png", kind.name())
}

fn write_split(
    cfg: &SynthConfig,
    out_dir: &Path,
    split: &str,
    count: usize,
    artifacts: bool,
) -> Result<Vec<ManifestRow>> {
    let dir = out_dir.join(split);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let split_seed = derive(cfg.seed, split_stream_label(split));
    let mut rows = Vec::with_capacity(count);
    for idx in 0..count {
        let sample_seed = derive(split_seed, idx as u64);
        let stem = format!("img_{idx:05}");
        let file = format!("{stem}.png");
        let kind = if artifacts {
            // The kind draw comes from its own stream so it never perturbs
            // the sample's shape parameters.
            let u = Stream::new(derive(sample_seed, 0x717E)).next_uniform();
            Some(cfg.mix.sample(u))
        } else {
            None
        };
        match kind {
            None => {
                let image = gen_clean(sample_seed, cfg.size)?;
                let path = dir.join(&file);
                image.to_rgb8().save(&path).map_err(|e| Error::image(&path, e))?;
            }
            Some(kind) => {
                let sample = gen_artifact(sample_seed, cfg.size, kind, cfg.area_lo, cfg.area_hi)?;
                let path = dir.join(&file);
                sample.image.to_rgb8().save(&path).map_err(|e| Error::image(&path, e))?;
                let mask_path = dir.join(mask_file_name(&stem, kind));
                sample
                    .mask
                    .to_gray()
                    .save(&mask_path)
                    .map_err(|e| Error::image(&mask_path, e))?;
            }
        }
        rows.push(ManifestRow { file, kind, seed: sample_seed });
    }

    let mut manifest = String::new();
    for row in &rows {
        let kind = row.kind.map_or("clean", |k| k.name());
        writeln!(manifest, "{}\t{}\t{}", row.file, kind, row.seed).unwrap();
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(rows)
}

/// Generate the full corpus under `out_dir`: four split directories with
/// images, per-type ground-truth masks for artifact samples, and a
/// tab-separated manifest per split. Regeneration from the same config is
/// byte-identical.
pub fn write_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    write_split(cfg, out_dir, "train_clean", cfg.train_clean, false)?;
    write_split(cfg, out_dir, "train_artifact", cfg.train_artifact, true)?;
    write_split(cfg, out_dir, "test_clean", cfg.test_clean, false)?;
    write_split(cfg, out_dir, "test_artifact", cfg.test_artifact, true)?;
    Ok(())
}

/// Read a split's manifest back.
pub fn read_manifest(split_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = split_dir.join("manifest.tsv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (file, kind, seed) = (parts.next(), parts.next(), parts.next());
        match (file, kind, seed) {
            (Some(f), Some(k), Some(s)) => {
                let kind = if k == "clean" {
                    None
                } else {
                    Some(ArtifactKind::parse(k).ok_or_else(|| {
                        Error::Data(format!("{}: unknown type {k:?} on line {}", path.display(), lineno + 1))
                    })?)
                };
                let seed = s.parse::<u64>().map_err(|_| {
                    Error::Data(format!("{}: bad seed on line {}", path.display(), lineno + 1))
                })?;
                rows.push(ManifestRow { file: f.to_string(), kind, seed });
            }
            _ => {
                return Err(Error::Data(format!(
                    "{}: malformed line {}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Path of the ground-truth mask file for a manifest row, if it has one.
pub fn mask_path_for(split_dir: &Path, row: &ManifestRow) -> Option<PathBuf> {
    let kind = row.kind?;
    let stem = row.file.strip_suffix(".png").unwrap_or(&row.file);
    Some(split_dir.join(mask_file_name(stem, kind)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn clean_generation_is_deterministic() {
        let a = gen_clean(5, 64).unwrap();
        let b = gen_clean(5, 64).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn distinct_seeds_differ_in_at_least_one_percent_of_pixels() {
        for pair in 0..20u64 {
            let a = gen_clean(pair, 64).unwrap();
            let b = gen_clean(pair + 1000, 64).unwrap();
            let differing = a
                .values()
                .iter()
                .zip(b.values())
                .filter(|(x, y)| (*x - *y).abs() > 1e-9)
                .count();
            let frac = differing as f64 / a.values().len() as f64;
            assert!(frac > 0.01, "pair {pair}: only {frac} differ");
        }
    }

    #[test]
    fn clean_pixels_are_in_unit_range() {
        let img = gen_clean(9, 64).unwrap();
        assert!(img.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn artifact_masks_land_in_the_area_band() {
        let (lo, hi) = (0.05, 0.30);
        let mut checked = 0;
        for idx in 0..100u64 {
            let kind = ArtifactKind::ALL[(idx % 4) as usize];
            let sample = gen_artifact(idx, 96, kind, lo, hi).unwrap();
            let frac = sample.mask.area_fraction();
            assert!(
                frac >= lo && frac <= hi,
                "{} seed {idx}: area {frac}",
                kind.name()
            );
            checked += 1;
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn pixels_outside_the_mask_are_untouched() {
        for idx in 0..12u64 {
            let kind = ArtifactKind::ALL[(idx % 4) as usize];
            let sample = gen_artifact(idx, 64, kind, 0.05, 0.3).unwrap();
            let clean = gen_clean(idx, 64).unwrap();
            for r in 0..64 {
                for c in 0..64 {
                    if !sample.mask.get(r, c) {
                        for ch in 0..3 {
                            assert_eq!(
                                sample.image.get(r, c, ch),
                                clean.get(r, c, ch),
                                "{} seed {idx} at ({r},{c})",
                                kind.name()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn masked_pixels_differ_more_than_unmasked() {
        for idx in 0..12u64 {
            let kind = ArtifactKind::ALL[(idx % 4) as usize];
            let sample = gen_artifact(100 + idx, 64, kind, 0.05, 0.3).unwrap();
            let clean = gen_clean(100 + idx, 64).unwrap();
            let mut inside = 0.0;
            let mut inside_n = 0.0;
            let mut outside = 0.0;
            let mut outside_n = 0.0;
            for r in 0..64 {
                for c in 0..64 {
                    let diff: f64 = (0..3)
                        .map(|ch| (sample.image.get(r, c, ch) - clean.get(r, c, ch)).abs())
                        .sum();
                    if sample.mask.get(r, c) {
                        inside += diff;
                        inside_n += 1.0;
                    } else {
                        outside += diff;
                        outside_n += 1.0;
                    }
                }
            }
            let inside_mean = inside / inside_n;
            let outside_mean = if outside_n > 0.0 { outside / outside_n } else { 0.0 };
            assert!(
                inside_mean > outside_mean,
                "{} seed {}: inside {inside_mean} outside {outside_mean}",
                kind.name(),
                100 + idx
            );
        }
    }

    #[test]
    fn artifact_generation_is_deterministic() {
        let a = gen_artifact(3, 64, ArtifactKind::Penmark, 0.05, 0.3).unwrap();
        let b = gen_artifact(3, 64, ArtifactKind::Penmark, 0.05, 0.3).unwrap();
        assert_eq!(a.image.values(), b.image.values());
        assert_eq!(a.mask.cells(), b.mask.cells());
    }

    #[test]
    fn corpus_regeneration_is_byte_identical() {
        let cfg = SynthConfig {
            train_clean: 3,
            train_artifact: 3,
            test_clean: 2,
            test_artifact: 2,
            size: 40,
            ..Default::default()
        };
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        write_corpus(&cfg, dir_a.path()).unwrap();
        write_corpus(&cfg, dir_b.path()).unwrap();
        for split in SPLIT_DIRS {
            let mut names: Vec<_> = std::fs::read_dir(dir_a.path().join(split))
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                let a = std::fs::read(dir_a.path().join(split).join(&name)).unwrap();
                let b = std::fs::read(dir_b.path().join(split).join(&name)).unwrap();
                assert_eq!(a, b, "{split}/{name:?}");
            }
        }
    }

    #[test]
    fn manifest_round_trips_and_masks_exist() {
        let cfg = SynthConfig {
            train_clean: 2,
            train_artifact: 4,
            test_clean: 1,
            test_artifact: 1,
            size: 40,
            ..Default::default()
        };
        let dir = TempDir::new().unwrap();
        write_corpus(&cfg, dir.path()).unwrap();
        let rows = read_manifest(&dir.path().join("train_artifact")).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert!(row.kind.is_some());
            let mask_path = mask_path_for(&dir.path().join("train_artifact"), row).unwrap();
            assert!(mask_path.exists(), "{mask_path:?}");
        }
        let clean_rows = read_manifest(&dir.path().join("train_clean")).unwrap();
        assert!(clean_rows.iter().all(|r| r.kind.is_none()));
    }

    #[test]
    fn forced_mix_yields_only_that_type() {
        let mix = ArtifactMix { oof: 0.0, penmark: 1.0, fold: 0.0, bubble: 0.0 };
        mix.validate().unwrap();
        for i in 0..20 {
            assert_eq!(mix.sample(i as f64 / 20.0), ArtifactKind::Penmark);
        }
    }

    #[test]
    fn default_mix_type_counts_are_multinomial() {
        let cfg = SynthConfig::default();
        let n = 400;
        let mut counts = [0usize; 4];
        let split_seed = derive(cfg.seed, TRAIN_ARTIFACT_STREAM);
        for idx in 0..n {
            let sample_seed = derive(split_seed, idx as u64);
            let u = Stream::new(derive(sample_seed, 0x717E)).next_uniform();
            let kind = cfg.mix.sample(u);
            counts[ArtifactKind::ALL.iter().position(|k| *k == kind).unwrap()] += 1;
        }
        let p = 0.25;
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (kind, count) in ArtifactKind::ALL.iter().zip(counts) {
            let dev = (count as f64 - expected).abs();
            assert!(dev < 5.0 * sigma, "{}: {count} vs {expected}", kind.name());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.size = 50;
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.area_lo = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.mix.oof = 0.9;
        assert!(cfg.validate().is_err());
    }
}
