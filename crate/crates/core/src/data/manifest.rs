use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
}

/// Reads a `path,label,split` CSV. Relative paths are resolved against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(Error::Manifest(format!(
            "{}: expected header `path,label,split`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 3 || record.iter().any(str::is_empty) {
            return Err(Error::Manifest(format!(
                "{}: row {} is malformed",
                path.display(),
                line + 2
            )));
        }
        let p = PathBuf::from(&record[0]);
        rows.push(ManifestRow {
            path: if p.is_absolute() { p } else { base.join(p) },
            label: record[1].to_string(),
            split: record[2].parse()?,
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    }
}

/// Writes rows with paths made relative to `manifest_path`'s directory when
/// possible.
pub fn write_manifest(manifest_path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut text = String::from("path,label,split\n");
    for row in rows {
        let rel = row.path.strip_prefix(base).unwrap_or(&row.path);
        text.push_str(&format!("{},{},{}\n", rel.display(), row.label, row.split));
    }
    crate::util::atomic_write_str(manifest_path, &text)
}

/// Pruning rules applied to a manifest before indexing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestFilter {
    /// Drop classes with fewer samples than this (0 disables).
    pub min_per_class: usize,
    /// Drop clips longer than this many seconds (0 disables).
    pub max_duration_s: f64,
}

/// Applies `filter`; `durations[i]` is the length in seconds of `rows[i]`.
pub fn apply_filters(
    rows: Vec<ManifestRow>,
    durations: &[f64],
    filter: &ManifestFilter,
) -> Vec<ManifestRow> {
    let keep = filter_mask(&rows, durations, filter);
    rows.into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r)
        .collect()
}

/// Which rows survive `filter`: clips longer than the duration cap go first,
/// then classes left with too few samples.
pub fn filter_mask(rows: &[ManifestRow], durations: &[f64], filter: &ManifestFilter) -> Vec<bool> {
    assert_eq!(rows.len(), durations.len());
    let mut keep: Vec<bool> = durations
        .iter()
        .map(|&d| filter.max_duration_s <= 0.0 || d <= filter.max_duration_s)
        .collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (r, _) in rows.iter().zip(&keep).filter(|(_, k)| **k) {
        *counts.entry(r.label.as_str()).or_default() += 1;
    }
    for (r, k) in rows.iter().zip(keep.iter_mut()) {
        *k = *k && counts.get(r.label.as_str()).copied().unwrap_or(0) >= filter.min_per_class;
    }
    keep
}

/// Disjoint class sets per split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassPartition {
    pub train: BTreeSet<usize>,
    pub val: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
}

impl ClassPartition {
    pub fn classes(&self, split: Split) -> &BTreeSet<usize> {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn classes_mut(&mut self, split: Split) -> &mut BTreeSet<usize> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// One manifest sample and the cache records (segments) it expands to.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInfo {
    pub class_id: usize,
    pub split: Split,
    pub records: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub class_names: Vec<String>,
    pub partition: ClassPartition,
    pub samples: Vec<SampleInfo>,
    /// Sample ids per class, in manifest order.
    pub by_class: Vec<Vec<usize>>,
    /// Classes with fewer samples than an episode needs.
    pub unusable: BTreeSet<usize>,
}

impl DatasetIndex {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Classes of `split` with at least `min_samples` samples.
    pub fn usable_classes(&self, split: Split, min_samples: usize) -> Vec<usize> {
        self.partition
            .classes(split)
            .iter()
            .copied()
            .filter(|&c| self.by_class[c].len() >= min_samples)
            .collect()
    }
}

/// Groups manifest rows into a class partition. Labels map to dense ids in
/// first-seen order; `segments[i]` is the number of cache records of row `i`
/// (all ones when clips are not segmented). Classes with fewer than
/// `min_samples` samples are flagged unusable.
pub fn build_index(
    rows: &[ManifestRow],
    segments: &[usize],
    min_samples: usize,
) -> Result<DatasetIndex> {
    if rows.len() != segments.len() {
        return Err(Error::Contract(
            "one segment count per manifest row is required".into(),
        ));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut class_split: Vec<Split> = Vec::new();
    let mut partition = ClassPartition::default();
    let mut samples = Vec::with_capacity(rows.len());
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    let mut next_record = 0;
    for (i, (row, &n_seg)) in rows.iter().zip(segments).enumerate() {
        if n_seg == 0 {
            return Err(Error::Contract(format!("row {i} expands to no records")));
        }
        let class_id = *ids.entry(row.label.as_str()).or_insert_with(|| {
            class_names.push(row.label.clone());
            class_split.push(row.split);
            by_class.push(Vec::new());
            class_names.len() - 1
        });
        if class_split[class_id] != row.split {
            return Err(Error::Manifest(format!(
                "class `{}` appears in both the {} and {} splits",
                row.label, class_split[class_id], row.split
            )));
        }
        partition.classes_mut(row.split).insert(class_id);
        by_class[class_id].push(i);
        samples.push(SampleInfo {
            class_id,
            split: row.split,
            records: next_record..next_record + n_seg,
        });
        next_record += n_seg;
    }
    for split in Split::ALL {
        if partition.classes(split).is_empty() {
            return Err(Error::config(
                "data.manifest",
                format!("the {split} split has no classes"),
            ));
        }
    }
    let unusable = (0..class_names.len())
        .filter(|&c| by_class[c].len() < min_samples)
        .collect();
    Ok(DatasetIndex {
        class_names,
        partition,
        samples,
        by_class,
        unusable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(spec: &[(&str, Split, usize)]) -> Vec<ManifestRow> {
        spec.iter()
            .flat_map(|&(label, split, n)| {
                (0..n).map(move |i| ManifestRow {
                    path: PathBuf::from(format!("{label}_{i}.wav")),
                    label: label.to_string(),
                    split,
                })
            })
            .collect()
    }

    #[test]
    fn partition_sizes() {
        let mut spec = Vec::new();
        let names: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        for (i, n) in names.iter().enumerate() {
            let split = match i {
                0..=5 => Split::Train,
                6 | 7 => Split::Val,
                _ => Split::Test,
            };
            spec.push((n.as_str(), split, 12));
        }
        let r = rows(&spec);
        let idx = build_index(&r, &vec![1; r.len()], 10).unwrap();
        assert_eq!(idx.partition.sizes(), (6, 2, 2));
        assert!(idx.unusable.is_empty());
        assert_eq!(idx.class_names[0], "c0");
    }

    #[test]
    fn class_in_two_splits_is_rejected() {
        let mut r = rows(&[
            ("a", Split::Train, 3),
            ("b", Split::Val, 3),
            ("c", Split::Test, 3),
        ]);
        r.push(ManifestRow {
            path: "x.wav".into(),
            label: "a".into(),
            split: Split::Test,
        });
        assert!(matches!(
            build_index(&r, &vec![1; r.len()], 1),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn small_classes_are_flagged_and_empty_split_rejected() {
        let r = rows(&[
            ("a", Split::Train, 4),
            ("b", Split::Val, 12),
            ("c", Split::Test, 12),
        ]);
        let idx = build_index(&r, &vec![1; r.len()], 10).unwrap();
        assert_eq!(idx.unusable.iter().copied().collect::<Vec<_>>(), vec![0]);

        let r = rows(&[("a", Split::Train, 4), ("b", Split::Val, 12)]);
        assert!(matches!(
            build_index(&r, &vec![1; r.len()], 1),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn segments_expand_to_record_ranges() {
        let r = rows(&[
            ("a", Split::Train, 2),
            ("b", Split::Val, 1),
            ("c", Split::Test, 1),
        ]);
        let idx = build_index(&r, &[3, 1, 2, 1], 1).unwrap();
        assert_eq!(idx.samples[0].records, 0..3);
        assert_eq!(idx.samples[1].records, 3..4);
        assert_eq!(idx.samples[2].records, 4..6);
        assert_eq!(idx.samples[3].records, 6..7);
    }

    #[test]
    fn filters_prune_long_clips_and_small_classes() {
        let r = rows(&[("a", Split::Train, 3), ("b", Split::Train, 5)]);
        let durations = vec![1.0, 200.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let kept = apply_filters(
            r,
            &durations,
            &ManifestFilter {
                min_per_class: 3,
                max_duration_s: 180.0,
            },
        );
        assert_eq!(kept.len(), 5);
        assert!(kept.iter().all(|r| r.label == "b"));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let mut r = rows(&[("a", Split::Train, 2), ("b", Split::Test, 1)]);
        for row in &mut r {
            row.path = dir.path().join(&row.path);
        }
        write_manifest(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,label,split\na_0.wav,a,train\n"));
        assert_eq!(read_manifest(&path).unwrap(), r);

        std::fs::write(&path, "path,label,split\nx.wav,a,holdout\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Manifest(_))));
        std::fs::write(&path, "file,label\nx.wav,a\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Manifest(_))));
    }
}
