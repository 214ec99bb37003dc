//! Few-shot audio classification with prototypical networks, trained with an
//! additional supervised contrastive prototype loss or an angular prototype
//! loss over multi-view (SpecAugment) embeddings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod train;
pub mod util;

pub use error::{Error, Result};
