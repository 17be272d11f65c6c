//! 2D error heatmaps and the DQCH on-disk format.
//!
//! DQCH layout: magic `DQCH`, one version byte (1), two little-endian u32
//! dims (height, width), then height * width little-endian f32 values in
//! row-major order.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Pixels covered by one heatmap cell along each axis.
pub const CELL_SCALE: usize = 8;

const MAGIC: &[u8; 4] = b"DQCH";
const VERSION: u8 = 1;

/// Per-cell non-negative error scores over a latent-resolution grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHeatmap {
    h: usize,
    w: usize,
    data: Vec<f64>,
    /// Pixel-space offset of the source patch within its image.
    pub origin: (usize, usize),
}

impl ErrorHeatmap {
    pub fn zeros(h: usize, w: usize) -> Self {
        ErrorHeatmap { h, w, data: vec![0.0; h * w], origin: (0, 0) }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "heatmap data length {} does not match {h}x{w}",
                data.len()
            )));
        }
        Ok(ErrorHeatmap { h, w, data, origin: (0, 0) })
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.w + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Serialize in the DQCH format. Values are narrowed to f32.
    pub fn write_dqch<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION])?;
        out.write_all(&(self.h as u32).to_le_bytes())?;
        out.write_all(&(self.w as u32).to_le_bytes())?;
        for v in &self.data {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_dqch(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_dqch(&mut buf).map_err(|e| Error::io(path, e))?;
        use std::io::Write as _;
        buf.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_dqch<R: Read>(mut input: R) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("invalid DQCH stream: {msg}"));
        let mut head = [0u8; 5];
        input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if head[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut dims = [0u8; 8];
        input.read_exact(&mut dims).map_err(|_| bad("truncated dims"))?;
        let h = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let mut data = vec![0.0f64; h * w];
        let mut quad = [0u8; 4];
        for v in data.iter_mut() {
            input.read_exact(&mut quad).map_err(|_| bad("truncated payload"))?;
            *v = f32::from_le_bytes(quad) as f64;
        }
        ErrorHeatmap::from_vec(h, w, data)
    }

    pub fn load_dqch(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_dqch(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dqch_round_trips() {
        let mut h = ErrorHeatmap::zeros(3, 5);
        for (k, v) in h.values_mut().iter_mut().enumerate() {
            *v = k as f64 * 0.5;
        }
        let mut bytes = Vec::new();
        h.write_dqch(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"DQCH");
        assert_eq!(bytes[5..9], 3u32.to_le_bytes());
        assert_eq!(bytes[9..13], 5u32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 15 * 4);
        let back = ErrorHeatmap::read_dqch(bytes.as_slice()).unwrap();
        assert_eq!(back.height(), 3);
        assert_eq!(back.width(), 5);
        for (a, b) in back.values().iter().zip(h.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn dqch_rejects_garbage() {
        assert!(ErrorHeatmap::read_dqch(&b"NOPE\x01\x00\x00\x00"[..]).is_err());
        assert!(ErrorHeatmap::read_dqch(&b"DQCH\x02"[..]).is_err());
        assert!(ErrorHeatmap::read_dqch(&b"DQCH\x01\x02\x00\x00\x00"[..]).is_err());
    }
}
