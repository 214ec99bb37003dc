use ndarray::{Array2, ArrayView2};

use super::{ensure_finite, log_sum_exp};
use crate::error::{Error, Result};

/// Normalization of the summed per-query cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsPrefactor {
    /// Divide by the number of queries, `n * q`.
    Mean,
    /// Divide by `q`, the queries per class.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsConfig {
    /// Squared Euclidean distance (otherwise plain Euclidean).
    pub squared: bool,
    pub prefactor: FsPrefactor,
}

impl Default for FsConfig {
    fn default() -> Self {
        Self {
            squared: true,
            prefactor: FsPrefactor::Mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FsOutput {
    pub loss: f64,
    /// Softmax over prototypes, one row per query.
    pub probs: Array2<f64>,
    pub d_queries: Array2<f64>,
    pub d_prototypes: Array2<f64>,
}

/// `d(q, p) = sum_j (q_j - p_j)^2` for every query/prototype pair.
pub fn squared_euclidean(
    queries: ArrayView2<f64>,
    prototypes: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if queries.ncols() != prototypes.ncols() {
        return Err(Error::Contract(format!(
            "query dim {} does not match prototype dim {}",
            queries.ncols(),
            prototypes.ncols()
        )));
    }
    Ok(Array2::from_shape_fn(
        (queries.nrows(), prototypes.nrows()),
        |(i, c)| {
            queries
                .row(i)
                .iter()
                .zip(prototypes.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        },
    ))
}

/// Distance matrix under `cfg` (squared or plain Euclidean).
pub fn distances(
    queries: ArrayView2<f64>,
    prototypes: ArrayView2<f64>,
    squared: bool,
) -> Result<Array2<f64>> {
    let mut d = squared_euclidean(queries, prototypes)?;
    if !squared {
        d.mapv_inplace(f64::sqrt);
    }
    Ok(d)
}

/// Prototypical cross-entropy over `softmax(-d(query, prototype))`.
pub fn few_shot_loss(
    queries: ArrayView2<f64>,
    labels: &[usize],
    prototypes: ArrayView2<f64>,
    cfg: &FsConfig,
) -> Result<FsOutput> {
    ensure_finite("few-shot queries", queries.iter().copied())?;
    ensure_finite("few-shot prototypes", prototypes.iter().copied())?;
    let n = prototypes.nrows();
    if labels.len() != queries.nrows() {
        return Err(Error::Contract(
            "one label per query row is required".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Contract(format!(
            "query label {bad} has no prototype"
        )));
    }
    if queries.nrows() == 0 {
        return Err(Error::EmptyInput(
            "few-shot loss needs at least one query".into(),
        ));
    }
    let dist = distances(queries, prototypes, cfg.squared)?;
    let scale = match cfg.prefactor {
        FsPrefactor::Mean => 1.0 / queries.nrows() as f64,
        FsPrefactor::Literal => n as f64 / queries.nrows() as f64,
    };

    let mut probs = Array2::<f64>::zeros(dist.dim());
    let mut d_queries = Array2::<f64>::zeros(queries.dim());
    let mut d_prototypes = Array2::<f64>::zeros(prototypes.dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = dist.row(i);
        let lse = log_sum_exp(row.iter().map(|d| -d));
        loss += row[y] + lse;
        for c in 0..n {
            let p = (-row[c] - lse).exp();
            probs[[i, c]] = p;
            // d loss_i / d dist_ic
            let g = scale * (f64::from(u8::from(c == y)) - p);
            let factor = if cfg.squared {
                2.0 * g
            } else if row[c] > 0.0 {
                g / row[c]
            } else {
                0.0
            };
            for j in 0..queries.ncols() {
                let diff = queries[[i, j]] - prototypes[[c, j]];
                d_queries[[i, j]] += factor * diff;
                d_prototypes[[c, j]] -= factor * diff;
            }
        }
    }
    Ok(FsOutput {
        loss: loss * scale,
        probs,
        d_queries,
        d_prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distance_examples() {
        let q = array![[0.0, 0.0], [1.0, 2.0]];
        let p = array![[3.0, 4.0], [1.0, 2.0]];
        let d = squared_euclidean(q.view(), p.view()).unwrap();
        assert_eq!(d, array![[25.0, 5.0], [8.0, 0.0]]);
        assert!(squared_euclidean(q.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn equidistant_queries_give_ln_n() {
        // five prototypes on a circle, query at the center
        let p = Array2::from_shape_fn((5, 2), |(c, j)| {
            let a = c as f64 * std::f64::consts::TAU / 5.0;
            if j == 0 {
                a.cos()
            } else {
                a.sin()
            }
        });
        let q = Array2::<f64>::zeros((3, 2));
        let out = few_shot_loss(q.view(), &[0, 3, 4], p.view(), &FsConfig::default()).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-9);

        let p = array![[1.0, 1.0], [1.0, 1.0]];
        let q = array![[1.0, 1.0]];
        let out = few_shot_loss(q.view(), &[1], p.view(), &FsConfig::default()).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn literal_prefactor_scales_by_n() {
        let p = array![[0.0], [1.0], [3.0]];
        let q = array![[0.2], [0.9], [2.0], [0.1], [1.1], [2.5]];
        let labels = [0, 1, 2, 0, 1, 2];
        let mean = few_shot_loss(q.view(), &labels, p.view(), &FsConfig::default()).unwrap();
        let lit = few_shot_loss(
            q.view(),
            &labels,
            p.view(),
            &FsConfig {
                prefactor: FsPrefactor::Literal,
                ..FsConfig::default()
            },
        )
        .unwrap();
        assert!((lit.loss - 3.0 * mean.loss).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let p = array![[0.0], [1.0]];
        let q = array![[f64::NAN]];
        assert!(few_shot_loss(q.view(), &[0], p.view(), &FsConfig::default()).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let q = array![[0.3, 0.2], [5.0, -4.0]];
        let out = few_shot_loss(
            q.view(),
            &[2, 1],
            p.view(),
            &FsConfig {
                squared: false,
                ..Default::default()
            },
        )
        .unwrap();
        for row in out.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert!(out.loss >= 0.0);
    }
}
