//! Turns a manifest of audio files into a standardized spectrogram cache and
//! reloads it as a dataset index.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{build_index, filter_mask, DatasetIndex, ManifestFilter, ManifestRow, Split};
use crate::audio::{
    compute_stats, load_audio, mel_spectrogram, segment_clip, standardize, CacheRecord,
    GlobalStats, MelConfig, Spectrogram, SpectrogramCache, TARGET_SAMPLE_RATE,
};
use crate::error::{Error, Result};

pub const CACHE_FILE: &str = "cache.pafs";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareConfig {
    pub mel: MelConfig,
    pub segment_s: f64,
    pub filter: ManifestFilter,
    /// Thread count for decoding and feature extraction (0 = all cores).
    pub workers: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            segment_s: 5.0,
            filter: ManifestFilter::default(),
            workers: 0,
        }
    }
}

impl PrepareConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if !(self.segment_s > 0.0) {
            return Err(Error::config("audio.segment_s", "must be positive"));
        }
        Ok(())
    }
}

/// A prepared dataset held in memory.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub cache: SpectrogramCache,
    pub rows: Vec<ManifestRow>,
    /// Cache records per manifest row.
    pub segments: Vec<usize>,
}

impl PreparedData {
    pub fn stats(&self) -> GlobalStats {
        self.cache.stats()
    }

    pub fn records(&self) -> &[CacheRecord] {
        self.cache.records()
    }

    pub fn index(&self, min_samples: usize) -> Result<DatasetIndex> {
        build_index(&self.rows, &self.segments, min_samples)
    }

    /// Writes the cache and its index sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.cache.write(&dir.join(CACHE_FILE))?;
        let mut text = String::from("path,label,split,records\n");
        for (row, n) in self.rows.iter().zip(&self.segments) {
            text.push_str(&format!(
                "{},{},{},{}\n",
                row.path.display(),
                row.label,
                row.split,
                n
            ));
        }
        crate::util::atomic_write_str(&dir.join(INDEX_FILE), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cache = SpectrogramCache::read(&dir.join(CACHE_FILE))?;
        let path = dir.join(INDEX_FILE);
        let mut reader = csv::Reader::from_path(&path).map_err(|e| index_error(&path, e))?;
        let mut rows = Vec::new();
        let mut segments = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| index_error(&path, e))?;
            if record.len() != 4 {
                return Err(Error::Corruption(format!(
                    "{}: expected 4 columns",
                    path.display()
                )));
            }
            rows.push(ManifestRow {
                path: PathBuf::from(&record[0]),
                label: record[1].to_string(),
                split: record[2].parse()?,
            });
            segments.push(
                record[3].parse().map_err(|_| {
                    Error::Corruption(format!("{}: bad record count", path.display()))
                })?,
            );
        }
        let data = Self {
            cache,
            rows,
            segments,
        };
        data.check_consistency()?;
        Ok(data)
    }

    fn check_consistency(&self) -> Result<()> {
        let total: usize = self.segments.iter().sum();
        if total != self.cache.len() {
            return Err(Error::Corruption(format!(
                "index lists {total} records but the cache holds {}",
                self.cache.len()
            )));
        }
        let index = self.index(0)?;
        for sample in &index.samples {
            for r in sample.records.clone() {
                if self.cache.records()[r].class_id as usize != sample.class_id {
                    return Err(Error::Corruption(format!(
                        "record {r} has the wrong class id"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn index_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Corruption(format!("{}: {other:?}", path.display())),
    }
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads every clip, applies the manifest filters, segments and converts to
/// log-mel, then standardizes with statistics of the training split only.
/// Record order follows the manifest.
pub fn prepare(rows: Vec<ManifestRow>, cfg: &PrepareConfig) -> Result<PreparedData> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("manifest has no rows".into()));
    }
    let clips = run_pool(cfg.workers, || {
        rows.par_iter()
            .map(|r| load_audio(&r.path, TARGET_SAMPLE_RATE))
            .collect::<Result<Vec<_>>>()
    })??;
    let durations: Vec<f64> = clips.iter().map(|c| c.duration_s()).collect();
    let before = rows.len();
    let keep = filter_mask(&rows, &durations, &cfg.filter);
    let (rows, clips): (Vec<_>, Vec<_>) = rows
        .into_iter()
        .zip(clips)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(pair, _)| pair)
        .unzip();
    if rows.len() < before {
        log::info!("filters dropped {} of {before} clips", before - rows.len());
    }

    let spectra: Vec<Vec<Spectrogram>> = run_pool(cfg.workers, || {
        clips
            .par_iter()
            .map(|clip| {
                segment_clip(clip, cfg.segment_s)?
                    .iter()
                    .map(|seg| mel_spectrogram(seg, &cfg.mel))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let index = build_index(&rows, &spectra.iter().map(Vec::len).collect::<Vec<_>>(), 0)?;
    let stats = compute_stats(
        spectra
            .iter()
            .zip(&rows)
            .filter(|(_, r)| r.split == Split::Train)
            .flat_map(|(s, _)| s.iter()),
    )?;
    let (n_mels, n_frames) = spectra[0][0].shape();
    let mut cache = SpectrogramCache::new(n_mels, n_frames, stats);
    for (sample, specs) in index.samples.iter().zip(&spectra) {
        for spec in specs {
            cache.push(CacheRecord {
                class_id: sample.class_id as u32,
                values: standardize(spec, &stats)?.into_values(),
            })?;
        }
    }
    let segments = spectra.iter().map(Vec::len).collect();
    Ok(PreparedData {
        cache,
        rows,
        segments,
    })
}
