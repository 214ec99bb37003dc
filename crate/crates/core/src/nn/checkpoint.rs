//! Binary checkpoint: all tensors with their names and shapes, the run
//! configuration text and the dataset standardization statistics.
//!
//! Layout (little-endian): magic, `u32` version, `u32` length + config
//! text, `f64` mean, `f64` std, `u32` n_mels, `u32` n_frames, `u32` epoch,
//! `f64` validation accuracy, `u32` tensor count, then per tensor `u8` kind
//! (0 parameter, 1 buffer), `u32` length + name, `u32` rank, `u32` dims and
//! `f32` values. A trailing `u64` FNV-1a hash covers everything before it.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{Model, ModelConfig, ParamSet};
use crate::audio::GlobalStats;
use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PAFSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub stats: GlobalStats,
    pub n_mels: usize,
    pub n_frames: usize,
    /// Epoch (1-based) the weights come from; 0 for an untrained model.
    pub epoch: u32,
    pub val_accuracy: f64,
    pub params: ParamSet<f32>,
    pub buffers: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        config_text: String,
        stats: GlobalStats,
        epoch: u32,
        val_accuracy: f64,
    ) -> Self {
        let (n_mels, n_frames) = model.input_shape();
        Self {
            config_text,
            stats,
            n_mels,
            n_frames,
            epoch,
            val_accuracy,
            params: model.params().clone(),
            buffers: model.buffers().clone(),
        }
    }

    /// Rebuilds the model; fails if any tensor disagrees with `cfg`.
    pub fn to_model(&self, cfg: ModelConfig) -> Result<Model<f32>> {
        Model::from_parts(
            cfg,
            self.n_mels,
            self.n_frames,
            self.params.clone(),
            self.buffers.clone(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config_text);
        out.extend_from_slice(&self.stats.mean.to_le_bytes());
        out.extend_from_slice(&self.stats.std.to_le_bytes());
        out.extend_from_slice(&(self.n_mels as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_accuracy.to_le_bytes());
        let count = self.params.len() + self.buffers.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (kind, set) in [(0u8, &self.params), (1u8, &self.buffers)] {
            for t in set.tensors() {
                out.push(kind);
                put_str(&mut out, &t.name);
                out.extend_from_slice(&(t.value.ndim() as u32).to_le_bytes());
                for &d in t.value.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in t.value.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let hash = fnv1a(&out);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        if bytes.len() < 20 {
            return Err(Error::Corruption("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(Error::Corruption("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: 12,
        };
        let config_text = r.string()?;
        let stats = GlobalStats {
            mean: r.f64()?,
            std: r.f64()?,
        };
        let n_mels = r.u32()? as usize;
        let n_frames = r.u32()? as usize;
        let epoch = r.u32()?;
        let val_accuracy = r.f64()?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::Corruption("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::Corruption(e.to_string()))?;
            match kind {
                0 => params.push(name, value),
                1 => buffers.push(name, value),
                k => return Err(Error::Corruption(format!("unknown tensor kind {k}"))),
            };
        }
        if r.pos != body.len() {
            return Err(Error::Corruption("trailing bytes after tensors".into()));
        }
        Ok(Self {
            config_text,
            stats,
            n_mels,
            n_frames,
            epoch,
            val_accuracy,
            params,
            buffers,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corruption("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corruption("invalid utf-8 in checkpoint".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ModelConfig, Model<f32>) {
        let cfg = ModelConfig {
            channels: vec![4, 4],
            rnn_hidden: 6,
            ff_dim: 8,
            proj_hidden: 5,
            proj_out: 3,
            ..Default::default()
        };
        let m = Model::new(cfg.clone(), 8, 8, 3).unwrap();
        (cfg, m)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, m) = small();
        let ck = Checkpoint::from_model(
            &m,
            "seed = 3\n".into(),
            GlobalStats::new(0.5, 2.0).unwrap(),
            7,
            0.75,
        );
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let m2 = back.to_model(cfg).unwrap();
        assert_eq!(m2.params().fingerprint(), m.params().fingerprint());
    }

    #[test]
    fn tampering_is_detected() {
        let (cfg, m) = small();
        let bytes = Checkpoint::from_model(
            &m,
            String::new(),
            GlobalStats::new(0.0, 1.0).unwrap(),
            0,
            0.0,
        )
        .to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Corruption(_))
        ));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        // shape disagreement with the configuration
        let other = ModelConfig {
            rnn_hidden: 7,
            ..cfg
        };
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap()
            .to_model(other)
            .is_err());
    }
}
