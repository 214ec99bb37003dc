use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Which embedding space a prototype set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Fused multi-view embeddings.
    Fused,
    /// Projection-head output, unit-normalized.
    Projected,
}

/// One centroid per episode class, row `c` for label `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Array2<f64>,
    pub space: Space,
}

/// Per-class mean of the support rows. Every label in `0..n_classes` must
/// have at least one row.
pub fn compute_prototypes(
    support: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<Array2<f64>> {
    if support.nrows() != labels.len() {
        return Err(Error::Contract(
            "one label per support row is required".into(),
        ));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, support.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &label) in support.rows().into_iter().zip(labels) {
        if label >= n_classes {
            return Err(Error::Contract(format!(
                "label {label} outside 0..{n_classes}"
            )));
        }
        let mut target = sums.row_mut(label);
        target += &row;
        counts[label] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Contract(format!("class {c} has no support rows")));
        }
        sums.row_mut(c).mapv_inplace(|v| v / count as f64);
    }
    Ok(sums)
}

/// Routes prototype gradients back to the support rows (each receives
/// `1/k` of its class gradient).
pub fn prototypes_backward(d_prototypes: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut counts = vec![0usize; d_prototypes.nrows()];
    for &l in labels {
        counts[l] += 1;
    }
    let mut out = Array2::<f64>::zeros((labels.len(), d_prototypes.ncols()));
    for (i, &l) in labels.iter().enumerate() {
        let scale = 1.0 / counts[l] as f64;
        out.row_mut(i)
            .zip_mut_with(&d_prototypes.row(l), |o, &g| *o = g * scale);
    }
    out
}
