//! Deterministic patch encoder.
//!
//! Maps an RGB patch to an 8x-downsampled C-channel latent grid. Each 8x8x3
//! pixel block is normalized to [-1, 1], flattened to a 192-vector, and
//! projected onto C orthonormal directions. The projection is a pure function
//! of its seed, so the encoder is frozen: the same patch always produces the
//! same latent, and latent cell (i, j) depends only on pixel block (i, j).

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Downsample factor: one latent cell per 8x8 pixel block.
pub const BLOCK: usize = 8;
/// Flattened block length: 8 * 8 * 3 channels.
pub const BLOCK_LEN: usize = BLOCK * BLOCK * 3;

/// An RGB patch with pixel values in [0, 1], plus its offset within the
/// source image.
#[derive(Debug, Clone)]
pub struct ImagePatch {
    h: usize,
    w: usize,
    /// Row-major `[row][col][rgb]`.
    data: Vec<f64>,
    pub origin: (usize, usize),
}

impl ImagePatch {
    pub fn new(h: usize, w: usize) -> Self {
        ImagePatch { h, w, data: vec![0.0; h * w * 3], origin: (0, 0) }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut patch = ImagePatch::new(h as usize, w as usize);
        for (k, px) in img.pixels().enumerate() {
            for ch in 0..3 {
                patch.data[k * 3 + ch] = px.0[ch] as f64 / 255.0;
            }
        }
        patch
    }

    pub fn load(path: &std::path::Path) -> Result<ImagePatch> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
        Ok(ImagePatch::from_rgb8(&img))
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.w as u32, self.h as u32);
        for (k, px) in img.pixels_mut().enumerate() {
            for ch in 0..3 {
                let v = self.data[k * 3 + ch].clamp(0.0, 1.0);
                px.0[ch] = (v * 255.0).round() as u8;
            }
        }
        img
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
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.w + col) * 3 + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.w + col) * 3 + ch] = v.clamp(0.0, 1.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Copy a `height x width` sub-rectangle starting at `(row, col)`. The
    /// returned patch records the absolute origin.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImagePatch> {
        if row + height > self.h || col + width > self.w {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{row}+{col} exceeds {}x{}",
                self.h, self.w
            )));
        }
        let mut out = ImagePatch::new(height, width);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..3 {
                    out.data[(r * width + c) * 3 + ch] = self.get(row + r, col + c, ch);
                }
            }
        }
        out.origin = (self.origin.0 + row, self.origin.1 + col);
        Ok(out)
    }
}

/// Frozen encoder parameters. `projection` has orthonormal columns and is
/// rebuilt from `projection_seed` alone, so only the seed and channel count
/// need to travel in the model file.
#[derive(Debug, Clone)]
pub struct CodecConfig {
    pub channels: usize,
    pub projection_seed: u64,
    /// Row-major `[BLOCK_LEN][channels]`.
    projection: Vec<f64>,
    /// Affine pixel map [0,1] -> [-1,1].
    pub norm_scale: f64,
    pub norm_offset: f64,
}

/// Serializable identity of a codec; `CodecParams::build` derives the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecParams {
    pub channels: usize,
    pub projection_seed: u64,
}

impl Default for CodecParams {
    fn default() -> Self {
        CodecParams { channels: 4, projection_seed: 0x5EED_C0DE }
    }
}

impl CodecParams {
    pub fn build(&self) -> Result<CodecConfig> {
        CodecConfig::new(self.channels, self.projection_seed)
    }
}

impl CodecConfig {
    pub fn new(channels: usize, projection_seed: u64) -> Result<Self> {
        if channels == 0 || channels > BLOCK_LEN {
            return Err(Error::Config(format!(
                "latent channel count {channels} must be in 1..={BLOCK_LEN}"
            )));
        }
        let projection = orthonormal_projection(projection_seed, channels);
        Ok(CodecConfig {
            channels,
            projection_seed,
            projection,
            norm_scale: 2.0,
            norm_offset: -1.0,
        })
    }

    pub fn params(&self) -> CodecParams {
        CodecParams { channels: self.channels, projection_seed: self.projection_seed }
    }

    /// Column `c` of the projection as a BLOCK_LEN-vector.
    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..BLOCK_LEN).map(move |k| self.projection[k * self.channels + c])
    }

    #[inline]
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }
}

/// Build a BLOCK_LEN x channels matrix with orthonormal columns from a seeded
/// Gaussian draw: two rounds of modified Gram-Schmidt, then a sign convention
/// (first entry of magnitude above 1e-12 made positive) for cross-run
/// determinism.
fn orthonormal_projection(seed: u64, channels: usize) -> Vec<f64> {
    let mut stream = Stream::new(seed);
    let mut cols: Vec<Vec<f64>> = (0..channels)
        .map(|_| (0..BLOCK_LEN).map(|_| stream.next_normal()).collect())
        .collect();

    for j in 0..channels {
        for _round in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                for k in 0..BLOCK_LEN {
                    cols[j][k] -= dot * cols[i][k];
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
        if let Some(first) = cols[j].iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                for v in cols[j].iter_mut() {
                    *v = -*v;
                }
            }
        }
    }

    let mut flat = vec![0.0; BLOCK_LEN * channels];
    for (j, col) in cols.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            flat[k * channels + j] = *v;
        }
    }
    flat
}

/// Encode a patch into its latent grid. Dimensions must be multiples of the
/// block size.
pub fn encode(patch: &ImagePatch, cfg: &CodecConfig) -> Result<LatentTensor> {
    if patch.height() % BLOCK != 0 || patch.width() % BLOCK != 0 {
        return Err(Error::Shape(format!(
            "patch {}x{} is not a multiple of the codec block size {BLOCK}",
            patch.height(),
            patch.width()
        )));
    }
    let lh = patch.height() / BLOCK;
    let lw = patch.width() / BLOCK;
    let mut out = LatentTensor::zeros(lh, lw, cfg.channels);
    let mut block = [0.0f64; BLOCK_LEN];
    for bi in 0..lh {
        for bj in 0..lw {
            for by in 0..BLOCK {
                for bx in 0..BLOCK {
                    for ch in 0..3 {
                        block[(by * BLOCK + bx) * 3 + ch] = cfg.norm_scale
                            * patch.get(bi * BLOCK + by, bj * BLOCK + bx, ch)
                            + cfg.norm_offset;
                    }
                }
            }
            for c in 0..cfg.channels {
                let mut acc = 0.0;
                for (k, v) in block.iter().enumerate() {
                    acc += cfg.projection[k * cfg.channels + c] * v;
                }
                out.set(bi, bj, c, acc);
            }
        }
    }
    out.origin = patch.origin;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    #[test]
    fn projection_columns_are_orthonormal() {
        let cfg = CodecConfig::new(4, 99).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = cfg.column(a).zip(cfg.column(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "col {a} . col {b} = {dot}");
            }
        }
    }

    #[test]
    fn projection_is_pure_function_of_seed() {
        let a = CodecConfig::new(4, 7).unwrap();
        let b = CodecConfig::new(4, 7).unwrap();
        assert_eq!(a.projection(), b.projection());
        let c = CodecConfig::new(4, 8).unwrap();
        assert_ne!(a.projection(), c.projection());
    }

    #[test]
    fn sign_convention_makes_leading_entries_positive() {
        for seed in 0..20 {
            let cfg = CodecConfig::new(4, seed).unwrap();
            for c in 0..4 {
                let first = cfg.column(c).find(|v| v.abs() > 1e-12).unwrap();
                assert!(first > 0.0);
            }
        }
    }

    #[test]
    fn latent_dims_are_one_eighth_of_pixels() {
        let cfg = CodecConfig::new(4, 1).unwrap();
        let patch = ImagePatch::new(64, 40);
        let z = encode(&patch, &cfg).unwrap();
        assert_eq!(z.shape(), (8, 5, 4));
    }

    #[test]
    fn rejects_non_multiple_of_block_dims() {
        let cfg = CodecConfig::new(4, 1).unwrap();
        let patch = ImagePatch::new(60, 64);
        assert!(encode(&patch, &cfg).is_err());
    }

    #[test]
    fn all_black_patch_matches_independent_recomputation() {
        // Black pixels normalize to -1, so each latent cell is the projection
        // applied to the all-minus-one vector. Recompute that product from a
        // freshly built matrix with plain loops.
        let seed = 4242;
        let cfg = CodecConfig::new(4, seed).unwrap();
        let patch = ImagePatch::new(16, 16);
        let z = encode(&patch, &cfg).unwrap();

        let fresh = CodecConfig::new(4, seed).unwrap();
        let mut want = [0.0f64; 4];
        for c in 0..4 {
            want[c] = fresh.column(c).map(|p| p * -1.0).sum();
        }
        for i in 0..z.height() {
            for j in 0..z.width() {
                for c in 0..4 {
                    assert!((z.get(i, j, c) - want[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn block_locality() {
        let cfg = CodecConfig::new(4, 5).unwrap();
        let mut a = ImagePatch::new(64, 64);
        let mut s = Stream::new(3);
        for r in 0..64 {
            for c in 0..64 {
                for ch in 0..3 {
                    a.set(r, c, ch, s.next_uniform());
                }
            }
        }
        let mut b = a.clone();
        // Perturb strictly inside block (3, 5).
        b.set(3 * 8 + 2, 5 * 8 + 4, 1, 0.123);
        let za = encode(&a, &cfg).unwrap();
        let zb = encode(&b, &cfg).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let same = (0..4).all(|c| za.get(i, j, c) == zb.get(i, j, c));
                assert_eq!(same, !(i == 3 && j == 5), "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn projection_never_expands_norms() {
        let cfg = CodecConfig::new(4, 11).unwrap();
        let mut s = Stream::new(8);
        for _ in 0..50 {
            let v: Vec<f64> = (0..BLOCK_LEN).map(|_| s.next_normal()).collect();
            let norm_in: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut norm_out_sq = 0.0;
            for c in 0..4 {
                let p: f64 = cfg.column(c).zip(v.iter()).map(|(a, b)| a * b).sum();
                norm_out_sq += p * p;
            }
            assert!(norm_out_sq.sqrt() <= norm_in + 1e-9);
        }
    }

    #[test]
    fn translating_by_one_block_shifts_the_latent_by_one_cell() {
        let cfg = CodecConfig::new(4, 21).unwrap();
        let mut img = ImagePatch::new(32, 32);
        let mut s = Stream::new(derive(21, 1));
        for r in 0..32 {
            for c in 0..32 {
                for ch in 0..3 {
                    img.set(r, c, ch, s.next_uniform());
                }
            }
        }
        let a = encode(&img.crop(0, 0, 24, 24).unwrap(), &cfg).unwrap();
        let b = encode(&img.crop(8, 8, 24, 24).unwrap(), &cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..4 {
                    assert_eq!(a.get(i + 1, j + 1, c), b.get(i, j, c));
                }
            }
        }
    }
}
