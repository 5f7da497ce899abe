//! Versioned binary model checkpoint.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CTLM" | version u16 | variant u8 | 0u8
//! input_size u32 | hidden u32 | input_dropout f64 | hidden_dropout f64 | seed u64
//! frames u32 | color_buckets u16 | lbp_buckets u16 | points u16 | spaces u8 | 0u8 | radius f32
//! scalar_count u32 | parameters f32 * scalar_count (declaration order)
//! dim u32 | mu f32 * dim | sigma f32 * dim
//! ```
//!
//! The normalization statistics travel with the weights so inference needs
//! nothing else.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{HistogramSpec, NormStats};
use crate::lbp::LbpParams;
use crate::nn::{Model, ModelConfig, Params, Variant};
use crate::pixel::SpaceSet;

pub const MAGIC: &[u8; 4] = b"CTLM";
pub const VERSION: u16 = 1;

/// Everything needed to classify raw frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stats: NormStats,
    pub spec: HistogramSpec,
    /// Frames per sample.
    pub frames: usize,
    pub seed: u64,
}

impl Checkpoint {
    /// Copy whose weights and statistics are exactly what [`Checkpoint::to_bytes`]
    /// stores.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            model: self.model.to_f32_precision(),
            stats: self.stats.to_f32_precision(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match c.variant {
            Variant::Single => 0,
            Variant::Dual => 1,
        });
        out.push(0);
        out.extend_from_slice(&(c.input_size as u32).to_le_bytes());
        out.extend_from_slice(&(c.hidden as u32).to_le_bytes());
        out.extend_from_slice(&c.input_dropout.to_le_bytes());
        out.extend_from_slice(&c.hidden_dropout.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());

        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.color_buckets as u16).to_le_bytes());
        out.extend_from_slice(&(self.spec.lbp_buckets as u16).to_le_bytes());
        out.extend_from_slice(&(self.spec.lbp.points as u16).to_le_bytes());
        out.push(u8::from(self.spec.spaces.hsv) | (u8::from(self.spec.spaces.ycbcr) << 1));
        out.push(0);
        out.extend_from_slice(&(self.spec.lbp.radius as f32).to_le_bytes());

        let tensors = self.model.params.tensors();
        let count: usize = tensors.iter().map(|t| t.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for v in tensors.into_iter().flatten() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.stats.dim() as u32).to_le_bytes());
        for v in self.stats.mu.iter().chain(&self.stats.sigma) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let variant = match r.u8()? {
            0 => Variant::Single,
            1 => Variant::Dual,
            v => return Err(Error::Checkpoint(format!("unknown variant tag {v}"))),
        };
        r.u8()?;
        let config = ModelConfig {
            variant,
            input_size: r.u32()? as usize,
            hidden: r.u32()? as usize,
            input_dropout: r.f64()?,
            hidden_dropout: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let seed = r.u64()?;
        let frames = r.u32()? as usize;
        let color_buckets = r.u16()? as usize;
        let lbp_buckets = r.u16()? as usize;
        let points = r.u16()? as usize;
        let spaces_bits = r.u8()?;
        r.u8()?;
        let radius = f64::from(r.f32()?);
        let spec = HistogramSpec {
            color_buckets,
            lbp_buckets,
            lbp: LbpParams { points, radius },
            spaces: SpaceSet {
                hsv: spaces_bits & 1 != 0,
                ycbcr: spaces_bits & 2 != 0,
            },
        };
        spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        if spec.dim() != config.input_size {
            return Err(Error::Checkpoint(format!(
                "feature dimension {} does not match model input {}",
                spec.dim(),
                config.input_size
            )));
        }

        let mut params = Params::zeros(&config);
        let count = r.u32()? as usize;
        if count != params.count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {count}",
                params.count()
            )));
        }
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from(r.f32()?);
            }
        }
        let dim = r.u32()? as usize;
        if dim != config.input_size {
            return Err(Error::Checkpoint(format!(
                "normalization dimension {dim} does not match model input {}",
                config.input_size
            )));
        }
        let mu = (0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let sigma = (0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if !params.is_finite() || mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite values".into()));
        }
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::Checkpoint("non-positive standard deviation".into()));
        }
        Ok(Self {
            model: Model { config, params },
            stats: NormStats {
                mu,
                sigma,
                fitted_on: "checkpoint".into(),
            },
            spec,
            frames,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint(variant: Variant) -> Checkpoint {
        let spec = HistogramSpec {
            color_buckets: 4,
            lbp_buckets: 6,
            lbp: LbpParams::new(4, 1.0).unwrap(),
            spaces: SpaceSet {
                hsv: true,
                ycbcr: false,
            },
        };
        let d = spec.dim();
        Checkpoint {
            model: Model::new(ModelConfig::for_variant(variant, d).with_hidden(5), 3).unwrap(),
            stats: NormStats {
                mu: (0..d).map(|i| i as f64 * 0.1).collect(),
                sigma: (0..d).map(|i| 1.0 + i as f64 * 0.01).collect(),
                fitted_on: "t".into(),
            },
            spec,
            frames: 16,
            seed: 99,
        }
    }

    #[test]
    fn round_trip_is_exact_at_f32_precision() {
        for variant in [Variant::Single, Variant::Dual] {
            let ck = sample_checkpoint(variant).to_f32_precision();
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            assert_eq!(back.model, ck.model);
            assert_eq!(back.stats.mu, ck.stats.mu);
            assert_eq!(back.stats.sigma, ck.stats.sigma);
            assert_eq!(back.spec, ck.spec);
            assert_eq!((back.frames, back.seed), (16, 99));
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample_checkpoint(Variant::Dual).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
        assert!(Checkpoint::load("/nonexistent/model.ctm").is_err());
    }
}
