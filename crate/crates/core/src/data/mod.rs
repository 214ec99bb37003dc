//! Class-partitioned datasets and episodic sampling.

mod episode;
mod manifest;
mod prepare;
mod synth;

pub use episode::{sample_episode, Episode, EpisodeItem, SplitPool};
pub use manifest::{
    apply_filters, build_index, filter_mask, read_manifest, write_manifest, ClassPartition,
    DatasetIndex, ManifestFilter, ManifestRow, SampleInfo, Split,
};
pub use prepare::{prepare, PrepareConfig, PreparedData, CACHE_FILE, INDEX_FILE};
pub use synth::{class_fundamentals, generate_synthetic, synth_clip, SynthSpec};
