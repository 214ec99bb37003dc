//! Binary spectrogram cache.
//!
//! Layout, all little-endian:
//! `[8-byte magic "PAFSCACH"][u32 version=1][u32 F][u32 T_frames][u32 count]
//! [f32 mean][f32 std]` followed by `count` records of
//! `[u32 class_id][F*T_frames f32, row-major]`.

use std::path::Path;

use ndarray::Array2;

use super::GlobalStats;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"PAFSCACH";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 4 * 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub class_id: u32,
    pub values: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramCache {
    n_mels: usize,
    n_frames: usize,
    stats: GlobalStats,
    records: Vec<CacheRecord>,
}

impl SpectrogramCache {
    pub fn new(n_mels: usize, n_frames: usize, stats: GlobalStats) -> Self {
        Self {
            n_mels,
            n_frames,
            stats,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: CacheRecord) -> Result<()> {
        if record.values.dim() != (self.n_mels, self.n_frames) {
            return Err(Error::Contract(format!(
                "record shape {:?} does not match cache shape ({}, {})",
                record.values.dim(),
                self.n_mels,
                self.n_frames
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn stats(&self) -> GlobalStats {
        self.stats
    }

    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.n_mels * self.n_frames;
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * (4 + 4 * cells));
        out.extend_from_slice(CACHE_MAGIC);
        for v in [
            CACHE_VERSION,
            self.n_mels as u32,
            self.n_frames as u32,
            self.records.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.stats.mean as f32).to_le_bytes());
        out.extend_from_slice(&(self.stats.std as f32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&rec.class_id.to_le_bytes());
            for v in rec.values.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CACHE_MAGIC {
            return Err(Error::Format("not a spectrogram cache (bad magic)".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corruption("cache header is truncated".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "cache version {version} is not supported (expected {CACHE_VERSION})"
            )));
        }
        let n_mels = u32_at(12) as usize;
        let n_frames = u32_at(16) as usize;
        let count = u32_at(20) as usize;
        let stats = GlobalStats {
            mean: f32_at(24) as f64,
            std: f32_at(28) as f64,
        };
        if !stats.mean.is_finite() || !(stats.std > 0.0) || !stats.std.is_finite() {
            return Err(Error::Corruption("cache statistics are invalid".into()));
        }
        let cells = n_mels
            .checked_mul(n_frames)
            .ok_or_else(|| Error::Corruption("cache dimensions overflow".into()))?;
        let record_len = 4 + 4 * cells;
        let expected = record_len
            .checked_mul(count)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Corruption("cache record count overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Corruption(format!(
                "cache holds {} bytes but its header implies {expected}",
                bytes.len()
            )));
        }
        let mut records = Vec::with_capacity(count);
        let mut off = HEADER_LEN;
        for _ in 0..count {
            let class_id = u32_at(off);
            let data: Vec<f32> = bytes[off + 4..off + record_len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let values = Array2::from_shape_vec((n_mels, n_frames), data)
                .map_err(|e| Error::Corruption(e.to_string()))?;
            records.push(CacheRecord { class_id, values });
            off += record_len;
        }
        Ok(Self {
            n_mels,
            n_frames,
            stats,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::util::atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
