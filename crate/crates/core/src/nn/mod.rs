//! Embedding model: a CRNN backbone applied to each of the four views, a
//! single-head self-attention block fusing the view embeddings, and a
//! projection head into the unit-normalized contrastive space.
//!
//! Everything is written by hand with explicit backward passes. The model is
//! generic over [`Real`] so training can run in `f32` while gradient checks
//! run the same code in `f64`.

mod backbone;
mod checkpoint;
mod fusion;
mod head;
mod model;
mod ops;
mod params;
mod route;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{BatchStats, EmbedCache, Embedded, Mode, Model};
pub use params::{ParamSet, Tensor};
pub use route::Route;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

use crate::error::{Error, Result};

/// Number of views per sample: the original plus three augmentations.
pub const VIEWS: usize = 4;

/// Floating-point scalar the model can be instantiated with.
pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RnnKind {
    Gru,
    Tanh,
}

impl FromStr for RnnKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(RnnKind::Gru),
            "tanh" => Ok(RnnKind::Tanh),
            other => Err(Error::config(
                "model.rnn",
                format!("unknown cell `{other}`"),
            )),
        }
    }
}

impl RnnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RnnKind::Gru => "gru",
            RnnKind::Tanh => "tanh",
        }
    }

    fn gates(self) -> usize {
        match self {
            RnnKind::Gru => 3,
            RnnKind::Tanh => 1,
        }
    }
}

/// How the RNN output sequence becomes one embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Temporal {
    Last,
    Mean,
}

impl FromStr for Temporal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Temporal::Last),
            "mean" => Ok(Temporal::Mean),
            other => Err(Error::config(
                "model.temporal",
                format!("unknown pooling `{other}`"),
            )),
        }
    }
}

impl Temporal {
    pub fn as_str(self) -> &'static str {
        match self {
            Temporal::Last => "last",
            Temporal::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    /// RNN hidden size; also the per-view embedding size.
    pub rnn_hidden: usize,
    pub rnn: RnnKind,
    pub temporal: Temporal,
    pub ff_dim: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
    /// Pass queries through the projection head before normalizing. When
    /// off, queries are only normalized and `proj_out` must equal the fused
    /// dimension.
    pub project_queries: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![64; 4],
            rnn_hidden: 64,
            rnn: RnnKind::Gru,
            temporal: Temporal::Last,
            ff_dim: 256,
            proj_hidden: 128,
            proj_out: 64,
            project_queries: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn embedding_dim(&self) -> usize {
        self.rnn_hidden
    }

    pub fn fused_dim(&self) -> usize {
        VIEWS * self.rnn_hidden
    }

    /// Shape of the final conv map (frequency, time) for an input of
    /// `n_mels x n_frames`, halving with floor at every block.
    pub fn conv_output_shape(&self, n_mels: usize, n_frames: usize) -> (usize, usize) {
        self.channels
            .iter()
            .fold((n_mels, n_frames), |(f, t), _| (f / 2, t / 2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config(
                "model.channels",
                "need at least one block, all widths positive",
            ));
        }
        for (key, v) in [
            ("model.rnn_hidden", self.rnn_hidden),
            ("model.ff_dim", self.ff_dim),
            ("model.proj_hidden", self.proj_hidden),
            ("model.proj_out", self.proj_out),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.project_queries && self.proj_out != self.fused_dim() {
            return Err(Error::config(
                "model.proj_out",
                format!(
                    "must equal the fused dimension {} when queries skip the projection head",
                    self.fused_dim()
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("model.bn_momentum", "must lie in [0, 1]"));
        }
        if !(self.bn_eps > 0.0 && self.ln_eps > 0.0) {
            return Err(Error::config(
                "model.bn_eps",
                "normalization epsilons must be positive",
            ));
        }
        Ok(())
    }

    /// Checks that the input survives every pooling stage.
    pub fn validate_input(&self, n_mels: usize, n_frames: usize) -> Result<()> {
        let (f, t) = self.conv_output_shape(n_mels, n_frames);
        if f == 0 || t == 0 {
            return Err(Error::config(
                "audio.n_mels",
                format!(
                    "a {n_mels}x{n_frames} input collapses to nothing after {} pooling stages",
                    self.channels.len()
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_shape_oracle() {
        let cfg = ModelConfig::default();
        // floor halving four times: 64 -> 32 -> 16 -> 8 -> 4, 501 -> 250 -> 125 -> 62 -> 31
        assert_eq!(cfg.conv_output_shape(64, 501), (4, 31));
        assert_eq!(cfg.fused_dim(), 256);
        assert!(cfg.validate_input(15, 501).is_err());
        assert!(cfg.validate_input(16, 16).is_ok());
    }

    #[test]
    fn literal_query_mode_needs_matching_dims() {
        let mut cfg = ModelConfig {
            project_queries: false,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.proj_out = 256;
        assert!(cfg.validate().is_ok());
    }
}
