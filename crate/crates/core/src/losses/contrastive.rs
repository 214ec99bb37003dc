use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::Rng;

use super::{ensure_finite, log_sum_exp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CplConfig {
    /// Temperature dividing every inner product.
    pub temperature: f64,
    /// Negatives drawn per (prototype, positive query) term.
    pub m: usize,
}

impl Default for CplConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            m: 10,
        }
    }
}

impl CplConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("cpl.temperature", "must be positive"));
        }
        if self.m == 0 {
            return Err(Error::config("cpl.m", "must be at least 1"));
        }
        Ok(())
    }
}

/// One `(anchor prototype, positive query)` term with its sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CplTerm {
    pub class: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Negative draws for every term of one episode. Kept explicit so that an
/// independent evaluation can replay exactly the same sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CplNegatives {
    pub terms: Vec<CplTerm>,
    /// `m` exceeded the number of available negatives and was reduced.
    pub clamped: bool,
}

/// For every class `c` and every query labelled `c`, draws `m` distinct
/// queries of other labels uniformly without replacement. Terms are ordered
/// by class, then by query index.
pub fn sample_cpl_negatives<R: Rng + ?Sized>(
    query_labels: &[usize],
    n_classes: usize,
    m: usize,
    rng: &mut R,
) -> CplNegatives {
    let mut terms = Vec::with_capacity(query_labels.len());
    let mut clamped = false;
    for class in 0..n_classes {
        let pool: Vec<usize> = (0..query_labels.len())
            .filter(|&i| query_labels[i] != class)
            .collect();
        let take = m.min(pool.len());
        if take < m {
            clamped = true;
        }
        for positive in (0..query_labels.len()).filter(|&i| query_labels[i] == class) {
            let negatives = index::sample(rng, pool.len(), take)
                .iter()
                .map(|k| pool[k])
                .collect();
            terms.push(CplTerm {
                class,
                positive,
                negatives,
            });
        }
    }
    if clamped {
        log::warn!("cpl.m = {m} exceeds the available negatives; clamped");
    }
    CplNegatives { terms, clamped }
}

#[derive(Debug, Clone)]
pub struct CplOutput {
    pub loss: f64,
    pub d_prototypes: Array2<f64>,
    pub d_queries: Array2<f64>,
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

/// Supervised contrastive prototype loss: prototypes are anchors, same-class
/// queries positives, and each term's sampled queries negatives. The sum of
/// terms is divided by the number of queries.
pub fn cpl_loss(
    prototypes: ArrayView2<f64>,
    queries: ArrayView2<f64>,
    negatives: &CplNegatives,
    cfg: &CplConfig,
) -> Result<CplOutput> {
    cfg.validate()?;
    ensure_finite("contrastive prototypes", prototypes.iter().copied())?;
    ensure_finite("contrastive queries", queries.iter().copied())?;
    if prototypes.ncols() != queries.ncols() {
        return Err(Error::Contract("prototype and query dims differ".into()));
    }
    if queries.nrows() == 0 {
        return Err(Error::EmptyInput("contrastive loss needs queries".into()));
    }
    let t = cfg.temperature;
    let scale = 1.0 / queries.nrows() as f64;
    let mut d_prototypes = Array2::<f64>::zeros(prototypes.dim());
    let mut d_queries = Array2::<f64>::zeros(queries.dim());
    let mut loss = 0.0;
    for term in &negatives.terms {
        let anchor = prototypes.row(term.class);
        let pos = dot(anchor, queries.row(term.positive)) / t;
        let negs: Vec<f64> = term
            .negatives
            .iter()
            .map(|&j| dot(anchor, queries.row(j)) / t)
            .collect();
        let lse = log_sum_exp(std::iter::once(pos).chain(negs.iter().copied()));
        loss += lse - pos;

        // d term / d (s/T) is softmax weight minus the positive indicator
        let w_pos = (pos - lse).exp();
        let g_pos = scale * (w_pos - 1.0) / t;
        d_prototypes
            .row_mut(term.class)
            .scaled_add(g_pos, &queries.row(term.positive));
        d_queries.row_mut(term.positive).scaled_add(g_pos, &anchor);
        for (&j, &s) in term.negatives.iter().zip(&negs) {
            let g = scale * (s - lse).exp() / t;
            d_prototypes
                .row_mut(term.class)
                .scaled_add(g, &queries.row(j));
            d_queries.row_mut(j).scaled_add(g, &anchor);
        }
    }
    Ok(CplOutput {
        loss: loss * scale,
        d_prototypes,
        d_queries,
    })
}
