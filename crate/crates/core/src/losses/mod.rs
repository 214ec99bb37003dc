//! Training objectives and their analytic gradients.
//!
//! All losses work in `f64` on row-major embedding matrices: one row per
//! sample. Each returns its value together with the gradient with respect to
//! every input matrix, so callers can chain them into the embedding model's
//! backward pass.

mod angular;
mod contrastive;
mod fewshot;
mod prototypes;

pub use angular::{
    apl_loss, mine_triplets, triplet_angle_deg, AnchorMode, AplConfig, AplOutput, Triplet,
};
pub use contrastive::{
    cpl_loss, sample_cpl_negatives, CplConfig, CplNegatives, CplOutput, CplTerm,
};
pub use fewshot::{distances, few_shot_loss, squared_euclidean, FsConfig, FsOutput, FsPrefactor};
pub use prototypes::{compute_prototypes, prototypes_backward, PrototypeSet, Space};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which auxiliary objective accompanies the few-shot loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Plain prototypical loss.
    Fs,
    /// Few-shot plus contrastive prototype loss.
    FsCpl,
    /// Few-shot plus angular prototype loss.
    FsApl,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Fs => "fs",
            LossKind::FsCpl => "fs+cpl",
            LossKind::FsApl => "fs+apl",
        }
    }

    pub fn uses_projection(self) -> bool {
        self != LossKind::Fs
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fs" => Ok(LossKind::Fs),
            "fs+cpl" => Ok(LossKind::FsCpl),
            "fs+apl" => Ok(LossKind::FsApl),
            other => Err(Error::config(
                "loss.kind",
                format!("unknown loss `{other}`"),
            )),
        }
    }
}

/// Per-episode loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_fs: f64,
    pub l_cm: f64,
    pub lambda: f64,
    pub l_total: f64,
    /// Triplets that survived angular mining (zero for other losses).
    pub triplets_mined: usize,
}

/// `l_fs + lambda * l_cm`.
pub fn total_loss(l_fs: f64, l_cm: f64, lambda: f64) -> LossReport {
    LossReport {
        l_fs,
        l_cm,
        lambda,
        l_total: l_fs + lambda * l_cm,
        triplets_mined: 0,
    }
}

pub(crate) fn ensure_finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{name} contains NaN or Inf")))
    }
}

/// `ln(exp(a_0) + ... )` with the maximum shifted out.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.3, 5.0, 0.0).l_total, 1.3);
        assert!((total_loss(1.0, 2.0, 0.3).l_total - 1.6).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 0.0, 1.0).l_total, 0.7);
    }

    #[test]
    fn kind_parsing() {
        for k in [LossKind::Fs, LossKind::FsCpl, LossKind::FsApl] {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("cpl".parse::<LossKind>().is_err());
    }

    #[test]
    fn lse_is_shift_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
