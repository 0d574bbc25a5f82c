//! Toy causal decoder-only transformer.
//!
//! The model is deliberately small and CPU-only; what matters for the
//! experiments is exact control over the forward pass and the ability to
//! capture every per-layer hidden state and per-head attention map.

mod config;
mod forward;
mod weights;

pub use config::{ConfigError, ModelConfig, NormPlacement, PositionalScheme};
pub use forward::{
    attention_block, count_masked_scores, forward, greedy_decode, total_scores, CaptureOptions,
    ForwardResult, ModelError,
};
pub use weights::{LayerWeights, WeightError, WeightSet};
