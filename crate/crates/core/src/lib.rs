//! Desk-scale engine for filler-token experiments on a toy causal transformer.
//!
//! The crate is organised as a pipeline:
//!
//! * [`model`] runs the forward pass and can capture per-layer hidden states
//!   and per-head attention maps,
//! * [`tokenizer`] maps text to ids and owns the filler-token registry,
//! * [`prompt`] assembles task prompts, inserts filler runs, and slices out
//!   the hidden vectors those runs add,
//! * [`datasets`] loads and synthesises task samples,
//! * [`eval`] scores predictions and aggregates accuracy deltas,
//! * [`attn`] computes attention-map region statistics and renders heatmaps,
//! * [`sweep`] drives resumable grids over filler kind, count, position, and
//!   seed.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the `f64` instantiations the shipped
//! pipeline uses throughout.

pub mod attn;
pub mod datasets;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod prompt;
pub mod scalar;
pub mod sweep;
pub mod tokenizer;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use scalar::Scalar;

/// Index into a model vocabulary.
///
/// Ids are dense: a vocabulary of size `n` uses exactly `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    /// The id as a usize, for indexing embeddings and logits.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `f64` instantiation used by the shipped pipeline.
pub type Matrix64 = linalg::Matrix<f64>;
/// `f64` instantiation used by the shipped pipeline.
pub type WeightSet64 = model::WeightSet<f64>;
/// `f64` instantiation used by the shipped pipeline.
pub type ForwardResult64 = model::ForwardResult<f64>;
/// `f64` instantiation used by the shipped pipeline.
pub type EcsTensor64 = prompt::EcsTensor<f64>;
