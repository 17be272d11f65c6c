//! Sliding-window traversal of large images and stitching of per-patch
//! heatmaps into one full-image heatmap.

use crate::error::{Error, Result};
use crate::heatmap::{ErrorHeatmap, CELL_SCALE};
use serde::{Deserialize, Serialize};

/// Tiling settings. The last patch along each axis is anchored flush to the
/// image edge so every pixel is covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileConfig {
    /// Patch side length in pixels; must be a multiple of 8.
    pub patch: usize,
    /// Step between patch origins in pixels; defaults to the patch size.
    pub stride: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { patch: 256, stride: 256 }
    }
}

/// A planned traversal: image dims plus the ordered list of patch origins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub image_dims: (usize, usize),
    pub patch: usize,
    pub stride: usize,
    origins: Vec<(usize, usize)>,
}

impl TileGrid {
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    /// Stitched heatmap dims: one cell per full 8-pixel block of the image.
    pub fn heatmap_dims(&self) -> (usize, usize) {
        (self.image_dims.0 / CELL_SCALE, self.image_dims.1 / CELL_SCALE)
    }
}

fn axis_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut origins: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|o| o + patch <= dim)
        .collect();
    let last = dim - patch;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// Plan a row-major sliding-window traversal. Origins advance by `stride`;
/// the final origin per axis is clamped to `dim - patch` (duplicates
/// removed), so ragged edges re-score an overlapping strip instead of being
/// padded.
pub fn plan(image_dims: (usize, usize), patch: usize, stride: usize) -> Result<TileGrid> {
    if patch == 0 || patch % CELL_SCALE != 0 {
        return Err(Error::Config(format!(
            "patch size {patch} must be a positive multiple of {CELL_SCALE}"
        )));
    }
    if stride == 0 || stride > patch {
        return Err(Error::Config(format!(
            "stride {stride} must be in 1..={patch}"
        )));
    }
    let (rows, cols) = image_dims;
    if rows < patch || cols < patch {
        return Err(Error::Data(format!(
            "image {rows}x{cols} is smaller than the {patch}x{patch} patch"
        )));
    }
    let row_origins = axis_origins(rows, patch, stride);
    let col_origins = axis_origins(cols, patch, stride);
    let mut origins = Vec::with_capacity(row_origins.len() * col_origins.len());
    for &r in &row_origins {
        for &c in &col_origins {
            origins.push((r, c));
        }
    }
    Ok(TileGrid { image_dims, patch, stride, origins })
}

/// Stitch per-patch heatmaps into a full-image heatmap.
///
/// Each output cell is the arithmetic mean of every patch cell covering it.
/// Patch origins that are not 8-aligned (clamped edge patches) are placed at
/// the cell grid position `floor(origin / 8)`; the resulting shift is at most
/// 7 pixels and only affects the overlapping edge strip. Accumulation is
/// associative and commutative, so the result is independent of patch order.
pub fn stitch(patches: &[((usize, usize), ErrorHeatmap)], grid: &TileGrid) -> Result<ErrorHeatmap> {
    let (out_h, out_w) = grid.heatmap_dims();
    let cells_per_patch = grid.patch / CELL_SCALE;
    let mut sums = vec![0.0f64; out_h * out_w];
    let mut counts = vec![0u32; out_h * out_w];

    // Accumulate in origin order: float sums are not associative, so a
    // canonical order is what makes the result independent of how callers
    // ordered (or parallelized) the patches.
    let mut ordered: Vec<&((usize, usize), ErrorHeatmap)> = patches.iter().collect();
    ordered.sort_by_key(|(origin, _)| *origin);

    for ((origin_r, origin_c), map) in ordered {
        if map.height() != cells_per_patch || map.width() != cells_per_patch {
            return Err(Error::Shape(format!(
                "patch heatmap {}x{} does not match the {cells_per_patch}-cell grid",
                map.height(),
                map.width()
            )));
        }
        let cell_r = origin_r / CELL_SCALE;
        let cell_c = origin_c / CELL_SCALE;
        if cell_r + map.height() > out_h || cell_c + map.width() > out_w {
            return Err(Error::Shape(format!(
                "patch at ({origin_r}, {origin_c}) falls outside the stitched grid"
            )));
        }
        for i in 0..map.height() {
            for j in 0..map.width() {
                let idx = (cell_r + i) * out_w + cell_c + j;
                sums[idx] += map.get(i, j);
                counts[idx] += 1;
            }
        }
    }

    if let Some(missing) = counts.iter().position(|c| *c == 0) {
        return Err(Error::Data(format!(
            "stitched cell ({}, {}) received no contributions",
            missing / out_w,
            missing % out_w
        )));
    }
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s / *c as f64)
        .collect();
    ErrorHeatmap::from_vec(out_h, out_w, data)
}
