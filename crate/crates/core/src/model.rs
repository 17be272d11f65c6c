//! The trained model bundle and its DQCM on-disk format.
//!
//! DQCM layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "DQCM"
//! version          u8       1
//! mode             u8       0 = basic, 1 = enhanced
//! schedule steps   u32
//! beta_start       f64
//! beta_end         f64
//! codec block      u32      always 8
//! codec channels   u32
//! projection seed  u64
//! hidden width     u32
//! time_dim         u32
//! t_star           u32
//! draws            u32
//! weight count     u64      number of f32 values that follow
//! weights          f32 * count
//! ```
//!
//! The weight blob is ordered conv1_w, conv1_b, conv2_w, conv2_b, conv3_w,
//! conv3_b, time_w, time_b, then adaptor kernel and bias when enhanced.
//! Convolution weights are row-major `[out][in][ky][kx]`. Save -> load ->
//! save round-trips byte-identically.

use crate::codec::{CodecConfig, CodecParams, BLOCK};
use crate::denoiser::{AdaptorParams, DenoiserParams};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::scorer::default_t_star;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DQCM";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Basic,
    Enhanced,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Basic => write!(f, "basic"),
            Mode::Enhanced => write!(f, "enhanced"),
        }
    }
}

/// A complete scoring model: schedule, frozen codec, noise predictor, and the
/// optional adaptor. The mode flag always agrees with adaptor presence.
#[derive(Debug, Clone)]
pub struct Model {
    pub mode: Mode,
    pub schedule_params: ScheduleParams,
    pub schedule: NoiseSchedule,
    pub codec_params: CodecParams,
    pub codec: CodecConfig,
    pub denoiser: DenoiserParams,
    pub adaptor: Option<AdaptorParams>,
    /// Default scoring timestep recorded with the model.
    pub t_star: usize,
    /// Default number of noise draws per patch.
    pub draws: usize,
}

impl Model {
    /// Build a model from its parts, validating cross-component consistency.
    /// `t_star = 0` selects the default ceil(0.8 * T).
    pub fn assemble(
        schedule_params: ScheduleParams,
        codec_params: CodecParams,
        denoiser: DenoiserParams,
        adaptor: Option<AdaptorParams>,
        t_star: usize,
        draws: usize,
    ) -> Result<Model> {
        let schedule = schedule_params.build()?;
        let codec = codec_params.build()?;
        if denoiser.channels != codec.channels {
            return Err(Error::Config(format!(
                "denoiser channels {} do not match codec channels {}",
                denoiser.channels, codec.channels
            )));
        }
        if denoiser.t_max != schedule.steps() {
            return Err(Error::Config(format!(
                "denoiser was built for T = {}, schedule has T = {}",
                denoiser.t_max,
                schedule.steps()
            )));
        }
        if let Some(a) = &adaptor {
            if a.channels != codec.channels {
                return Err(Error::Config("adaptor channels do not match codec".into()));
            }
        }
        let t_star = if t_star == 0 { default_t_star(schedule.steps()) } else { t_star };
        if t_star == 0 || t_star > schedule.steps() {
            return Err(Error::Config(format!(
                "t_star {t_star} outside 1..={}",
                schedule.steps()
            )));
        }
        if draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        let mode = if adaptor.is_some() { Mode::Enhanced } else { Mode::Basic };
        Ok(Model {
            mode,
            schedule_params,
            schedule,
            codec_params,
            codec,
            denoiser,
            adaptor,
            t_star,
            draws,
        })
    }

    fn weight_groups(&self) -> Vec<&[f64]> {
        let mut groups: Vec<&[f64]> = self.denoiser.groups().to_vec();
        if let Some(a) = &self.adaptor {
            groups.extend(a.groups());
        }
        groups
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION])?;
        out.write_all(&[match self.mode {
            Mode::Basic => 0u8,
            Mode::Enhanced => 1u8,
        }])?;
        out.write_all(&(self.schedule_params.steps as u32).to_le_bytes())?;
        out.write_all(&self.schedule_params.beta_start.to_le_bytes())?;
        out.write_all(&self.schedule_params.beta_end.to_le_bytes())?;
        out.write_all(&(BLOCK as u32).to_le_bytes())?;
        out.write_all(&(self.codec_params.channels as u32).to_le_bytes())?;
        out.write_all(&self.codec_params.projection_seed.to_le_bytes())?;
        out.write_all(&(self.denoiser.hidden as u32).to_le_bytes())?;
        out.write_all(&(self.denoiser.time_dim as u32).to_le_bytes())?;
        out.write_all(&(self.t_star as u32).to_le_bytes())?;
        out.write_all(&(self.draws as u32).to_le_bytes())?;
        let count: u64 = self.weight_groups().iter().map(|g| g.len() as u64).sum();
        out.write_all(&count.to_le_bytes())?;
        for group in self.weight_groups() {
            for v in group {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        buf.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read<R: Read>(mut input: R) -> Result<Model> {
        let bad = |msg: String| Error::Data(format!("invalid DQCM stream: {msg}"));
        let mut head = [0u8; 6];
        input.read_exact(&mut head).map_err(|_| bad("truncated header".into()))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        if head[4] != VERSION {
            return Err(bad(format!("unsupported version {}", head[4])));
        }
        let mode = match head[5] {
            0 => Mode::Basic,
            1 => Mode::Enhanced,
            other => return Err(bad(format!("unknown mode flag {other}"))),
        };

        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |input: &mut R| -> Result<u32> {
            input
                .read_exact(&mut u32buf)
                .map_err(|_| Error::Data("invalid DQCM stream: truncated field".into()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let steps = read_u32(&mut input)? as usize;
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated field".into()))?;
        let beta_start = f64::from_le_bytes(u64buf);
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated field".into()))?;
        let beta_end = f64::from_le_bytes(u64buf);
        let block = read_u32(&mut input)? as usize;
        if block != BLOCK {
            return Err(bad(format!("codec block {block}, expected {BLOCK}")));
        }
        let channels = read_u32(&mut input)? as usize;
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated field".into()))?;
        let projection_seed = u64::from_le_bytes(u64buf);
        let hidden = read_u32(&mut input)? as usize;
        let time_dim = read_u32(&mut input)? as usize;
        let t_star = read_u32(&mut input)? as usize;
        let draws = read_u32(&mut input)? as usize;
        input.read_exact(&mut u64buf).map_err(|_| bad("truncated field".into()))?;
        let count = u64::from_le_bytes(u64buf) as usize;

        // Shell parameter sets with the right shapes, filled from the blob.
        let mut denoiser = DenoiserParams::init(0, channels, hidden, time_dim, steps)?;
        let mut adaptor = match mode {
            Mode::Basic => None,
            Mode::Enhanced => Some(AdaptorParams::identity(channels)),
        };
        let expected: usize = denoiser.groups().iter().map(|g| g.len()).sum::<usize>()
            + adaptor.as_ref().map_or(0, |a| a.groups().iter().map(|g| g.len()).sum::<usize>());
        if count != expected {
            return Err(bad(format!("weight count {count}, expected {expected}")));
        }
        let mut quad = [0u8; 4];
        let mut fill = |slice: &mut Vec<f64>, input: &mut R| -> Result<()> {
            for v in slice.iter_mut() {
                input
                    .read_exact(&mut quad)
                    .map_err(|_| Error::Data("invalid DQCM stream: truncated weights".into()))?;
                *v = f32::from_le_bytes(quad) as f64;
            }
            Ok(())
        };
        for group in denoiser.groups_mut() {
            fill(group, &mut input)?;
        }
        if let Some(a) = adaptor.as_mut() {
            for group in a.groups_mut() {
                fill(group, &mut input)?;
            }
        }

        Model::assemble(
            ScheduleParams { steps, beta_start, beta_end },
            CodecParams { channels, projection_seed },
            denoiser,
            adaptor,
            t_star,
            draws,
        )
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Model::read(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model(enhanced: bool) -> Model {
        let schedule = ScheduleParams::default();
        let denoiser = DenoiserParams::init(5, 4, 8, 16, schedule.steps).unwrap();
        let adaptor = enhanced.then(|| AdaptorParams::identity(4));
        Model::assemble(schedule, CodecParams::default(), denoiser, adaptor, 0, 4).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for enhanced in [false, true] {
            let model = sample_model(enhanced);
            let mut first = Vec::new();
            model.write(&mut first).unwrap();
            let loaded = Model::read(first.as_slice()).unwrap();
            let mut second = Vec::new();
            loaded.write(&mut second).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn mode_flag_tracks_adaptor_presence() {
        assert_eq!(sample_model(false).mode, Mode::Basic);
        assert_eq!(sample_model(true).mode, Mode::Enhanced);
        let mut bytes = Vec::new();
        sample_model(true).write(&mut bytes).unwrap();
        let back = Model::read(bytes.as_slice()).unwrap();
        assert!(back.adaptor.is_some());
    }

    #[test]
    fn default_t_star_is_recorded() {
        let model = sample_model(false);
        assert_eq!(model.t_star, 80);
    }

    #[test]
    fn rejects_inconsistent_parts() {
        let schedule = ScheduleParams::default();
        let denoiser = DenoiserParams::init(5, 3, 8, 16, schedule.steps).unwrap();
        // Codec has 4 channels, denoiser 3.
        assert!(Model::assemble(schedule, CodecParams::default(), denoiser, None, 0, 4).is_err());

        let denoiser = DenoiserParams::init(5, 4, 8, 16, 999).unwrap();
        assert!(Model::assemble(schedule, CodecParams::default(), denoiser, None, 0, 4).is_err());
    }

    #[test]
    fn rejects_truncated_or_corrupt_files() {
        let model = sample_model(false);
        let mut bytes = Vec::new();
        model.write(&mut bytes).unwrap();
        assert!(Model::read(&bytes[..bytes.len() - 3]).is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(Model::read(corrupt.as_slice()).is_err());
    }
}
