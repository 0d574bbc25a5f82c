//! Shared fixtures for the integration tests: an independent
//! extended-precision transformer-block reference and the frozen
//! answer-extraction corpus.

#![allow(dead_code)]

use ecs_core::model::{LayerWeights, ModelConfig, NormPlacement, PositionalScheme};
use ecs_core::Matrix64;

const LAYER_NORM_EPS: f64 = 1e-5;
const ROTARY_BASE: f64 = 10_000.0;

/// Kahan-compensated sum; the reference uses it for every reduction so its
/// rounding error stays well under the comparison tolerance.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

pub fn kahan_dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn ref_matmul(a: &Matrix64, b: &Matrix64) -> Matrix64 {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix64::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let col: Vec<f64> = (0..b.rows()).map(|k| b[(k, j)]).collect();
            out[(i, j)] = kahan_dot(a.row(i), &col);
        }
    }
    out
}

fn ref_add(a: &Matrix64, b: &Matrix64) -> Matrix64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut out = a.clone();
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            out[(r, c)] += b[(r, c)];
        }
    }
    out
}

fn ref_layer_norm(m: &Matrix64, scale: &[f64], shift: &[f64]) -> Matrix64 {
    let n = m.cols() as f64;
    let mut out = Matrix64::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = kahan_sum(row.iter().copied()) / n;
        let var = kahan_sum(row.iter().map(|&x| (x - mean) * (x - mean))) / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (c, &x) in row.iter().enumerate() {
            out[(r, c)] = (x - mean) * inv * scale[c] + shift[c];
        }
    }
    out
}

fn ref_rotary(row: &mut [f64], position: usize) {
    let dim = row.len();
    for pair in 0..dim / 2 {
        let theta = position as f64 * ROTARY_BASE.powf(-2.0 * pair as f64 / dim as f64);
        let (sin, cos) = theta.sin_cos();
        let a = row[2 * pair];
        let b = row[2 * pair + 1];
        row[2 * pair] = a * cos - b * sin;
        row[2 * pair + 1] = a * sin + b * cos;
    }
}

fn ref_gelu(x: f64) -> f64 {
    let c = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let k = 0.044_715;
    0.5 * x * (1.0 + (c * (x + k * x * x * x)).tanh())
}

fn ref_attention(x: &Matrix64, config: &ModelConfig, lw: &LayerWeights<f64>) -> Matrix64 {
    let seq_len = x.rows();
    let d = config.hidden_dim();
    let head_dim = config.head_dim();
    let rotary = config.positional_scheme() == PositionalScheme::Rotary;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q_all = ref_matmul(x, &lw.attn_query);
    let k_all = ref_matmul(x, &lw.attn_key);
    let v_all = ref_matmul(x, &lw.attn_value);

    let mut mixed = Matrix64::zeros(seq_len, d);
    for head in 0..config.num_heads() {
        let lo = head * head_dim;
        let hi = lo + head_dim;
        let mut q_head: Vec<Vec<f64>> =
            (0..seq_len).map(|i| q_all.row(i)[lo..hi].to_vec()).collect();
        let mut k_head: Vec<Vec<f64>> =
            (0..seq_len).map(|i| k_all.row(i)[lo..hi].to_vec()).collect();
        if rotary {
            for (pos, row) in q_head.iter_mut().enumerate() {
                ref_rotary(row, pos);
            }
            for (pos, row) in k_head.iter_mut().enumerate() {
                ref_rotary(row, pos);
            }
        }
        for i in 0..seq_len {
            let scores: Vec<f64> = (0..=i)
                .map(|j| kahan_dot(&q_head[i], &k_head[j]) * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let denom = kahan_sum(exps.iter().copied());
            for c in 0..head_dim {
                let terms = exps
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| (e / denom) * v_all[(j, lo + c)]);
                mixed[(i, lo + c)] = kahan_sum(terms);
            }
        }
    }
    ref_matmul(&mixed, &lw.attn_output)
}

fn ref_feed_forward(x: &Matrix64, lw: &LayerWeights<f64>) -> Matrix64 {
    let mut up = ref_matmul(x, &lw.ff_up);
    for r in 0..up.rows() {
        for c in 0..up.cols() {
            up[(r, c)] = ref_gelu(up[(r, c)] + lw.ff_up_bias[c]);
        }
    }
    let mut down = ref_matmul(&up, &lw.ff_down);
    for r in 0..down.rows() {
        for c in 0..down.cols() {
            down[(r, c)] += lw.ff_down_bias[c];
        }
    }
    down
}

/// Straight-line reference for one decoder block, written independently of
/// the engine: every reduction is Kahan-compensated and nothing is fused or
/// reordered. Covers both residual layouts and both positional settings.
pub fn reference_attention_block(
    input: &Matrix64,
    config: &ModelConfig,
    lw: &LayerWeights<f64>,
) -> Matrix64 {
    let pre = config.norm_placement() == NormPlacement::Pre;

    let attn_in = if pre {
        ref_layer_norm(input, &lw.attn_norm_scale, &lw.attn_norm_shift)
    } else {
        input.clone()
    };
    let attn = ref_attention(&attn_in, config, lw);
    let mut a = ref_add(input, &attn);
    if !pre {
        a = ref_layer_norm(&a, &lw.attn_norm_scale, &lw.attn_norm_shift);
    }

    let ff_in = if pre {
        ref_layer_norm(&a, &lw.ff_norm_scale, &lw.ff_norm_shift)
    } else {
        a.clone()
    };
    let ff = ref_feed_forward(&ff_in, lw);
    let mut out = ref_add(&a, &ff);
    if !pre {
        out = ref_layer_norm(&out, &lw.ff_norm_scale, &lw.ff_norm_shift);
    }
    out
}

pub fn max_abs_diff(a: &Matrix64, b: &Matrix64) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        worst = worst.max((x - y).abs());
    }
    worst
}

/// Hand-labeled answer-extraction corpus, fixed before the extractor was
/// written. Each case was labeled by walking the documented rule table by
/// hand: last boxed span (bare number kept, else first number inside, else
/// nothing), then first number after the last "answer is", then the last
/// number anywhere; normalization strips currency and commas and trailing
/// periods while keeping sign, decimals, and a/b fractions.
pub fn extraction_corpus() -> Vec<(&'static str, Option<&'static str>)> {
    vec![
        // Boxed spans win over everything else.
        ("We compute. \\boxed{42}", Some("42")),
        ("\\boxed{ 17 }", Some("17")),
        ("Thus \\boxed{1,234}", Some("1234")),
        ("\\boxed{$55}", Some("55")),
        ("First \\boxed{3} then \\boxed{9}", Some("9")),
        ("\\boxed{\\frac{3}{4}}", Some("3")),
        ("\\boxed{x+y}", None),
        ("\\boxed{-8}.", Some("-8")),
        ("Answer is 5. \\boxed{no digits}", None),
        ("\\boxed{2.50}", Some("2.50")),
        // First number after the last "answer is".
        ("The answer is 42.", Some("42")),
        ("the ANSWER IS: 7", Some("7")),
        ("The answer is $1,234", Some("1234")),
        ("The answer is -15.", Some("-15")),
        ("The answer is 3/4.", Some("3/4")),
        ("The answer is 2.718, I think", Some("2.718")),
        ("answer is 10 but the answer is 20", Some("20")),
        ("The answer is nine", None),
        ("The answer is unclear, maybe 6", Some("6")),
        ("My answer   is 8", Some("8")),
        ("The answer is \u{20ac}30", Some("30")),
        ("The answer is 1000000", Some("1000000")),
        // Last number anywhere.
        ("She has 3 cats and 4 dogs", Some("4")),
        ("total cost is $1,234", Some("1234")),
        ("= 99", Some("99")),
        ("12 then 13 then 14.", Some("14")),
        ("Pi is about 3.14159", Some("3.14159")),
        ("Half is 1/2", Some("1/2")),
        ("It dropped to -40 degrees", Some("-40")),
        ("\u{a3}250 was spent", Some("250")),
        ("exactly 0", Some("0")),
        ("7 wins", Some("7")),
        // Nothing extractable.
        ("no digits here", None),
        ("", None),
        ("...", None),
        ("answer is forty-two", None),
        ("\\boxed{", None),
        // Normalization details.
        ("The answer is 5.", Some("5")),
        ("The answer is 5.0", Some("5.0")),
        ("The answer is 05", Some("05")),
        ("The answer is 1,2,3", Some("123")),
        ("The answer is $ 99", Some("99")),
        ("The answer is -$3", Some("-3")),
        ("The answer is 42..", Some("42")),
        ("boxed answer is 11", Some("11")),
        ("The answer is 9,999.99", Some("9999.99")),
        ("Results: 10, 20, 30", Some("30")),
        ("The answer is 100%", Some("100")),
        ("Take 2/3 of 9", Some("9")),
        ("The answer is: \n 12", Some("12")),
    ]
}
