//! Forward pass for the toy causal transformer.
//!
//! One block computes, for every position `t` at once,
//!
//! ```text
//! post-norm:  a_t = LN(Attn(q_t, k_{1..t}, v_{1..t}) + z_t)
//!             z'_t = LN(FF(a_t) + a_t)
//! pre-norm:   a_t = z_t + Attn over LN(z)
//!             z'_t = a_t + FF(LN(a_t))
//! ```
//!
//! Attention is causal: position `t` sees keys and values at positions
//! `1..=t` only, and every attention row is a distribution over the
//! unmasked prefix. The implementation is straight scalar code with a fixed
//! summation order, so identical inputs give bit-identical outputs.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::config::{ModelConfig, NormPlacement, PositionalScheme};
use crate::model::weights::WeightSet;
use crate::scalar::Scalar;
use crate::TokenId;

const LAYER_NORM_EPS: f64 = 1e-5;
const ROTARY_BASE: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    UnknownToken { id: u32, vocab_size: usize },
    #[error("sequence length {length} exceeds max context {max_context}")]
    ContextOverflow { length: usize, max_context: usize },
    #[error("non-finite activation at layer {layer}, position {position}")]
    NumericalError { layer: usize, position: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Which intermediate tensors [`forward`] should keep.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaptureOptions {
    pub hidden_states: bool,
    pub attentions: bool,
}

impl CaptureOptions {
    /// Keep nothing beyond the logits.
    pub fn none() -> Self {
        CaptureOptions::default()
    }

    /// Keep hidden states and attention maps.
    pub fn all() -> Self {
        CaptureOptions {
            hidden_states: true,
            attentions: true,
        }
    }
}

/// Output of one forward pass over a full sequence.
#[derive(Debug, Clone)]
pub struct ForwardResult<S> {
    /// Next-token logits at the final position, length `vocab_size`.
    pub logits: Vec<S>,
    /// When captured: `num_layers + 1` matrices of shape
    /// `seq_len x hidden_dim`. Entry 0 is the embedded input including any
    /// positional term; entry `l + 1` is the output of block `l`.
    pub hidden_states: Option<Vec<Matrix<S>>>,
    /// When captured: per block, per head, a `seq_len x seq_len` map whose
    /// row `i` is a distribution over columns `0..=i` and exactly zero above
    /// the diagonal.
    pub attentions: Option<Vec<Vec<Matrix<S>>>>,
}

/// Number of attention scores removed by the causal mask for a prompt of
/// `prompt_len` tokens plus `filler_count` inserted tokens: one strictly
/// upper-triangular half of the square score grid.
pub fn count_masked_scores(prompt_len: usize, filler_count: usize) -> u64 {
    let n = (prompt_len + filler_count) as u64;
    n * n.saturating_sub(1) / 2
}

/// Total number of scores in the square grid for the same sequence.
pub fn total_scores(prompt_len: usize, filler_count: usize) -> u64 {
    let n = (prompt_len + filler_count) as u64;
    n * n
}

/// Runs the model over `tokens`.
///
/// Errors: [`ModelError::EmptyInput`], [`ModelError::UnknownToken`],
/// [`ModelError::ContextOverflow`], and [`ModelError::NumericalError`] if a
/// non-finite activation appears. In `NumericalError`, `layer` is the
/// 0-based block index (the embedding stage reports 0, the logit head
/// reports `num_layers`) and `position` is the sequence row.
pub fn forward<S: Scalar>(
    tokens: &[TokenId],
    config: &ModelConfig,
    weights: &WeightSet<S>,
    capture: CaptureOptions,
) -> Result<ForwardResult<S>, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if tokens.len() > config.max_context() {
        return Err(ModelError::ContextOverflow {
            length: tokens.len(),
            max_context: config.max_context(),
        });
    }
    for tok in tokens {
        if tok.index() >= config.vocab_size() {
            return Err(ModelError::UnknownToken {
                id: tok.0,
                vocab_size: config.vocab_size(),
            });
        }
    }
    let seq_len = tokens.len();
    let d = config.hidden_dim();

    let mut z = Matrix::zeros(seq_len, d);
    for (i, tok) in tokens.iter().enumerate() {
        z.row_mut(i)
            .copy_from_slice(weights.token_embedding.row(tok.index()));
    }
    if config.positional_scheme() == PositionalScheme::LearnedAbsolute {
        let table = weights
            .position_embedding
            .as_ref()
            .expect("validated weights carry a position table");
        for i in 0..seq_len {
            for (zv, pv) in z.row_mut(i).iter_mut().zip(table.row(i)) {
                *zv += *pv;
            }
        }
    }
    check_finite(&z, 0)?;

    let mut hidden_states = capture.hidden_states.then(|| vec![z.clone()]);
    let mut attentions = capture.attentions.then(Vec::new);

    for layer in 0..config.num_layers() {
        let (next, maps) = attention_block(&z, layer, config, weights)?;
        z = next;
        if let Some(states) = hidden_states.as_mut() {
            states.push(z.clone());
        }
        if let Some(all) = attentions.as_mut() {
            all.push(maps);
        }
    }

    let last = z.row(seq_len - 1);
    let mut logits = vec![S::zero(); config.vocab_size()];
    for (k, &x) in last.iter().enumerate() {
        let head_row = weights.output_head.row(k);
        for (l, &w) in logits.iter_mut().zip(head_row) {
            *l += x * w;
        }
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NumericalError {
            layer: config.num_layers(),
            position: seq_len - 1,
        });
    }

    Ok(ForwardResult {
        logits,
        hidden_states,
        attentions,
    })
}

/// Runs one transformer block on `layer_input` (`seq_len x hidden_dim`) and
/// returns the block output together with the per-head attention maps.
pub fn attention_block<S: Scalar>(
    layer_input: &Matrix<S>,
    layer_index: usize,
    config: &ModelConfig,
    weights: &WeightSet<S>,
) -> Result<(Matrix<S>, Vec<Matrix<S>>), ModelError> {
    if layer_index >= config.num_layers() {
        return Err(ModelError::InvalidArgument("layer_index out of range"));
    }
    let seq_len = layer_input.rows();
    let d = config.hidden_dim();
    assert_eq!(layer_input.cols(), d, "layer input width mismatch");
    let lw = &weights.layers[layer_index];
    let pre = config.norm_placement() == NormPlacement::Pre;

    let attn_in = if pre {
        layer_norm(layer_input, &lw.attn_norm_scale, &lw.attn_norm_shift)
    } else {
        layer_input.clone()
    };
    let (attn_raw, maps) = multi_head_attention(&attn_in, config, lw);

    // Attention residual.
    let mut a = layer_input.clone();
    for (av, rv) in a.data_mut().iter_mut().zip(attn_raw.data()) {
        *av += *rv;
    }
    if !pre {
        a = layer_norm(&a, &lw.attn_norm_scale, &lw.attn_norm_shift);
    }

    let ff_in = if pre {
        layer_norm(&a, &lw.ff_norm_scale, &lw.ff_norm_shift)
    } else {
        a.clone()
    };
    let ff_raw = feed_forward(&ff_in, lw);

    // Feed-forward residual.
    let mut out = a;
    for (ov, rv) in out.data_mut().iter_mut().zip(ff_raw.data()) {
        *ov += *rv;
    }
    if !pre {
        out = layer_norm(&out, &lw.ff_norm_scale, &lw.ff_norm_shift);
    }

    check_finite(&out, layer_index)?;
    debug_assert_eq!(out.rows(), seq_len);
    Ok((out, maps))
}

/// Greedily decodes up to `max_new` tokens after `prompt`, stopping early
/// when a generated token is in `stop_ids` (the stop token is included in
/// the output). Ties in the argmax go to the lowest token id.
///
/// The whole budget must fit: `prompt.len() + max_new` beyond `max_context`
/// is a [`ModelError::ContextOverflow`], and `max_new == 0` is rejected.
pub fn greedy_decode<S: Scalar>(
    prompt: &[TokenId],
    max_new: usize,
    stop_ids: &[TokenId],
    config: &ModelConfig,
    weights: &WeightSet<S>,
) -> Result<Vec<TokenId>, ModelError> {
    if max_new == 0 {
        return Err(ModelError::InvalidArgument("max_new must be at least 1"));
    }
    if prompt.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if prompt.len() + max_new > config.max_context() {
        return Err(ModelError::ContextOverflow {
            length: prompt.len() + max_new,
            max_context: config.max_context(),
        });
    }
    let mut seq = prompt.to_vec();
    let mut generated = Vec::new();
    for _ in 0..max_new {
        let result = forward(&seq, config, weights, CaptureOptions::none())?;
        let mut best = 0usize;
        for (i, &v) in result.logits.iter().enumerate() {
            if v > result.logits[best] {
                best = i;
            }
        }
        let next = TokenId(best as u32);
        seq.push(next);
        generated.push(next);
        if stop_ids.contains(&next) {
            break;
        }
    }
    Ok(generated)
}

fn check_finite<S: Scalar>(m: &Matrix<S>, layer: usize) -> Result<(), ModelError> {
    for r in 0..m.rows() {
        if !m.row(r).iter().all(|v| v.is_finite()) {
            return Err(ModelError::NumericalError { layer, position: r });
        }
    }
    Ok(())
}

/// Per-row layer norm with epsilon inside the square root.
fn layer_norm<S: Scalar>(m: &Matrix<S>, scale: &[S], shift: &[S]) -> Matrix<S> {
    let eps = S::from_f64_lossy(LAYER_NORM_EPS);
    let n = S::from_usize(m.cols()).expect("matrix width fits in a scalar");
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mut sum = S::zero();
        for &x in row {
            sum += x;
        }
        let mean = sum / n;
        let mut var_sum = S::zero();
        for &x in row {
            let dx = x - mean;
            var_sum += dx * dx;
        }
        let inv = (var_sum / n + eps).sqrt().recip();
        let out_row = out.row_mut(r);
        for (c, &x) in row.iter().enumerate() {
            out_row[c] = (x - mean) * inv * scale[c] + shift[c];
        }
    }
    out
}

/// Rotates consecutive pairs of `row` by a position- and pair-dependent
/// angle. Angles are computed in `f64` for both scalar widths.
fn apply_rotary<S: Scalar>(row: &mut [S], position: usize) {
    let dim = row.len();
    for pair in 0..dim / 2 {
        let theta =
            position as f64 * ROTARY_BASE.powf(-2.0 * pair as f64 / dim as f64);
        let (sin, cos) = theta.sin_cos();
        let (sin, cos) = (S::from_f64_lossy(sin), S::from_f64_lossy(cos));
        let a = row[2 * pair];
        let b = row[2 * pair + 1];
        row[2 * pair] = a * cos - b * sin;
        row[2 * pair + 1] = a * sin + b * cos;
    }
}

/// Causal multi-head attention over `x`. Returns the mixed output (before
/// the residual) and one `seq_len x seq_len` map per head.
fn multi_head_attention<S: Scalar>(
    x: &Matrix<S>,
    config: &ModelConfig,
    lw: &crate::model::weights::LayerWeights<S>,
) -> (Matrix<S>, Vec<Matrix<S>>) {
    let seq_len = x.rows();
    let d = config.hidden_dim();
    let head_dim = config.head_dim();
    let rotary = config.positional_scheme() == PositionalScheme::Rotary;
    let scale = S::from_f64_lossy(1.0 / (head_dim as f64).sqrt());

    let q_all = x.matmul(&lw.attn_query);
    let k_all = x.matmul(&lw.attn_key);
    let v_all = x.matmul(&lw.attn_value);

    let mut mixed = Matrix::zeros(seq_len, d);
    let mut maps = Vec::with_capacity(config.num_heads());
    for head in 0..config.num_heads() {
        let lo = head * head_dim;
        let hi = lo + head_dim;
        let mut q_head: Vec<Vec<S>> = (0..seq_len).map(|i| q_all.row(i)[lo..hi].to_vec()).collect();
        let mut k_head: Vec<Vec<S>> = (0..seq_len).map(|i| k_all.row(i)[lo..hi].to_vec()).collect();
        if rotary {
            for (pos, row) in q_head.iter_mut().enumerate() {
                apply_rotary(row, pos);
            }
            for (pos, row) in k_head.iter_mut().enumerate() {
                apply_rotary(row, pos);
            }
        }

        let mut map = Matrix::zeros(seq_len, seq_len);
        for i in 0..seq_len {
            let q = &q_head[i];
            let mut scores = Vec::with_capacity(i + 1);
            for k_row in k_head.iter().take(i + 1) {
                let mut dot = S::zero();
                for (a, b) in q.iter().zip(k_row) {
                    dot += *a * *b;
                }
                scores.push(dot * scale);
            }
            let mut max = scores[0];
            for &s in &scores[1..] {
                if s > max {
                    max = s;
                }
            }
            let mut denom = S::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom += *s;
            }
            let map_row = map.row_mut(i);
            for (j, &e) in scores.iter().enumerate() {
                map_row[j] = e / denom;
            }
            let out_row = mixed.row_mut(i);
            for (j, &p) in scores.iter().enumerate() {
                let p = p / denom;
                let v_row = &v_all.row(j)[lo..hi];
                for (c, &v) in v_row.iter().enumerate() {
                    out_row[lo + c] += p * v;
                }
            }
        }
        maps.push(map);
    }

    (mixed.matmul(&lw.attn_output), maps)
}

fn feed_forward<S: Scalar>(x: &Matrix<S>, lw: &crate::model::weights::LayerWeights<S>) -> Matrix<S> {
    let mut up = x.matmul(&lw.ff_up);
    for r in 0..up.rows() {
        let row = up.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v = gelu(*v + lw.ff_up_bias[c]);
        }
    }
    let mut down = up.matmul(&lw.ff_down);
    for r in 0..down.rows() {
        let row = down.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v += lw.ff_down_bias[c];
        }
    }
    down
}

/// Tanh-approximation GELU.
fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f64_lossy(0.5);
    let one = S::one();
    let c = S::from_f64_lossy(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = S::from_f64_lossy(0.044_715);
    half * x * (one + (c * (x + k * x * x * x)).tanh())
}
