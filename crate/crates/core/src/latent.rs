//! The latent grid type shared by the diffusion, denoising, and scoring paths.

use crate::error::{Error, Result};

/// H x W x C real-valued latent grid, stored row-major as `[h][w][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
    /// Pixel-space origin of the source patch, when the latent came from one.
    pub origin: (usize, usize),
}

impl LatentTensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        LatentTensor { h, w, c, data: vec![0.0; h * w * c], origin: (0, 0) }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "latent data length {} does not match {}x{}x{}",
                data.len(),
                h,
                w,
                c
            )));
        }
        Ok(LatentTensor { h, w, c, data, origin: (0, 0) })
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
    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[(i * self.w + j) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: f64) {
        self.data[(i * self.w + j) * self.c + ch] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
