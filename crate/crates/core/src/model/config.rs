//! Model hyperparameters, validated once at construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where layer normalisation sits relative to each residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// Normalise the sublayer input; residual stream stays unnormalised.
    Pre,
    /// Normalise after adding the residual.
    Post,
}

impl fmt::Display for NormPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormPlacement::Pre => "pre",
            NormPlacement::Post => "post",
        })
    }
}

impl FromStr for NormPlacement {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "pre" => Ok(NormPlacement::Pre),
            "post" => Ok(NormPlacement::Post),
            other => Err(ConfigError::Invalid(format!(
                "unknown norm placement `{other}` (expected `pre` or `post`)"
            ))),
        }
    }
}

/// How token positions enter the computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalScheme {
    /// Rotate query/key pairs by a position-dependent angle.
    Rotary,
    /// Add a learned per-position vector to the embedding.
    LearnedAbsolute,
    /// No positional information at all.
    None,
}

impl fmt::Display for PositionalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionalScheme::Rotary => "rotary",
            PositionalScheme::LearnedAbsolute => "learned-absolute",
            PositionalScheme::None => "none",
        })
    }
}

impl FromStr for PositionalScheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "rotary" => Ok(PositionalScheme::Rotary),
            "learned-absolute" => Ok(PositionalScheme::LearnedAbsolute),
            "none" => Ok(PositionalScheme::None),
            other => Err(ConfigError::Invalid(format!(
                "unknown positional scheme `{other}` (expected `rotary`, `learned-absolute`, or `none`)"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid model config: {0}")]
    Invalid(String),
}

/// Validated transformer hyperparameters. Immutable after construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    num_layers: usize,
    hidden_dim: usize,
    num_heads: usize,
    vocab_size: usize,
    max_context: usize,
    norm_placement: NormPlacement,
    positional_scheme: PositionalScheme,
}

impl ModelConfig {
    pub fn new(
        num_layers: usize,
        hidden_dim: usize,
        num_heads: usize,
        vocab_size: usize,
        max_context: usize,
        norm_placement: NormPlacement,
        positional_scheme: PositionalScheme,
    ) -> Result<Self, ConfigError> {
        if num_layers == 0 {
            return Err(ConfigError::Invalid("num_layers must be >= 1".into()));
        }
        if hidden_dim == 0 {
            return Err(ConfigError::Invalid("hidden_dim must be >= 1".into()));
        }
        if num_heads == 0 {
            return Err(ConfigError::Invalid("num_heads must be >= 1".into()));
        }
        if hidden_dim % num_heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "hidden_dim {hidden_dim} is not divisible by num_heads {num_heads}"
            )));
        }
        if vocab_size == 0 {
            return Err(ConfigError::Invalid("vocab_size must be >= 1".into()));
        }
        if max_context == 0 {
            return Err(ConfigError::Invalid("max_context must be >= 1".into()));
        }
        let head_dim = hidden_dim / num_heads;
        if positional_scheme == PositionalScheme::Rotary && head_dim % 2 != 0 {
            return Err(ConfigError::Invalid(format!(
                "rotary positions need an even head dim, got {head_dim}"
            )));
        }
        Ok(ModelConfig {
            num_layers,
            hidden_dim,
            num_heads,
            vocab_size,
            max_context,
            norm_placement,
            positional_scheme,
        })
    }

    /// Default desk-scale model: 4 layers, width 64, 4 heads, vocab 512,
    /// context 1024, pre-norm, rotary positions.
    pub fn default_toy() -> Self {
        ModelConfig::new(
            4,
            64,
            4,
            512,
            1024,
            NormPlacement::Pre,
            PositionalScheme::Rotary,
        )
        .expect("default toy config is valid")
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn norm_placement(&self) -> NormPlacement {
        self.norm_placement
    }

    pub fn positional_scheme(&self) -> PositionalScheme {
        self.positional_scheme
    }

    /// Per-head width.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Feed-forward inner width: the usual 4x expansion.
    pub fn ff_dim(&self) -> usize {
        4 * self.hidden_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_is_valid_and_derives_dims() {
        let c = ModelConfig::default_toy();
        assert_eq!(c.num_layers(), 4);
        assert_eq!(c.hidden_dim(), 64);
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.ff_dim(), 256);
        assert_eq!(c.norm_placement(), NormPlacement::Pre);
        assert_eq!(c.positional_scheme(), PositionalScheme::Rotary);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let err = ModelConfig::new(
            2,
            10,
            3,
            16,
            64,
            NormPlacement::Pre,
            PositionalScheme::None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("not divisible"));
    }

    #[test]
    fn rejects_odd_head_dim_under_rotary() {
        let err = ModelConfig::new(
            1,
            9,
            3,
            16,
            64,
            NormPlacement::Pre,
            PositionalScheme::Rotary,
        )
        .unwrap_err();
        assert!(err.to_string().contains("even head dim"));
        // The same shape is fine without rotation.
        assert!(ModelConfig::new(
            1,
            9,
            3,
            16,
            64,
            NormPlacement::Pre,
            PositionalScheme::None
        )
        .is_ok());
    }

    #[test]
    fn rejects_zero_sized_fields() {
        for (l, d, h, v, ctx) in [
            (0, 8, 2, 16, 64),
            (1, 0, 2, 16, 64),
            (1, 8, 0, 16, 64),
            (1, 8, 2, 0, 64),
            (1, 8, 2, 16, 0),
        ] {
            assert!(
                ModelConfig::new(l, d, h, v, ctx, NormPlacement::Post, PositionalScheme::None)
                    .is_err()
            );
        }
    }

    #[test]
    fn enum_string_forms_round_trip() {
        for p in ["pre", "post"] {
            assert_eq!(p.parse::<NormPlacement>().unwrap().to_string(), p);
        }
        for s in ["rotary", "learned-absolute", "none"] {
            assert_eq!(s.parse::<PositionalScheme>().unwrap().to_string(), s);
        }
        assert!("mid".parse::<NormPlacement>().is_err());
    }
}
