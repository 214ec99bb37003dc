use std::ops::Range;

use rand::seq::index;
use rand::Rng;

use super::{DatasetIndex, Split};
use crate::error::{Error, Result};

/// The per-class sample lists of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPool {
    /// Dataset-wide class ids, ascending.
    pub classes: Vec<usize>,
    /// `members[i]` lists `(sample id, cache record range)` for `classes[i]`.
    pub members: Vec<Vec<(usize, Range<usize>)>>,
}

impl SplitPool {
    pub fn from_index(index: &DatasetIndex, split: Split) -> Self {
        let classes: Vec<usize> = index.partition.classes(split).iter().copied().collect();
        let members = classes
            .iter()
            .map(|&c| {
                index.by_class[c]
                    .iter()
                    .map(|&s| (s, index.samples[s].records.clone()))
                    .collect()
            })
            .collect();
        Self { classes, members }
    }

    /// A pool of `counts.len()` classes where sample `j` of class `i` has a
    /// single record; sample ids are globally unique.
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut next = 0;
        let members = counts
            .iter()
            .map(|&n| {
                let v: Vec<_> = (next..next + n).map(|s| (s, s..s + 1)).collect();
                next += n;
                v
            })
            .collect();
        Self {
            classes: (0..counts.len()).collect(),
            members,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeItem {
    pub sample: usize,
    /// Cache record chosen for this draw (one of the sample's segments).
    pub record: usize,
    /// Episode-local label in `0..n_way`.
    pub label: usize,
}

/// One n-way k-shot task. Support and query are class-major: all items of
/// label 0 first, then label 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
    /// Dataset class id of each episode label, in draw order.
    pub classes: Vec<usize>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.label).collect()
    }
}

/// Draws `n_way` distinct classes uniformly, then `k_shot + q_queries`
/// distinct samples per class; the first `k_shot` go to the support set.
pub fn sample_episode<R: Rng + ?Sized>(
    pool: &SplitPool,
    n_way: usize,
    k_shot: usize,
    q_queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::Sampling("n_way and k_shot must be positive".into()));
    }
    let need = k_shot + q_queries;
    let usable: Vec<usize> = (0..pool.classes.len())
        .filter(|&i| pool.members[i].len() >= need)
        .collect();
    if usable.len() < n_way {
        return Err(Error::Sampling(format!(
            "{n_way}-way episodes need {n_way} classes with at least {need} samples, found {}",
            usable.len()
        )));
    }
    let picked = index::sample(rng, usable.len(), n_way);
    let mut classes = Vec::with_capacity(n_way);
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * q_queries);
    for (label, slot) in picked.iter().enumerate() {
        let pos = usable[slot];
        classes.push(pool.classes[pos]);
        let members = &pool.members[pos];
        let draws = index::sample(rng, members.len(), need);
        for (j, m) in draws.iter().enumerate() {
            let (sample, records) = &members[m];
            let record = if records.len() == 1 {
                records.start
            } else {
                rng.random_range(records.clone())
            };
            let item = EpisodeItem {
                sample: *sample,
                record,
                label,
            };
            if j < k_shot {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        q_queries,
        classes,
        support,
        query,
    })
}
