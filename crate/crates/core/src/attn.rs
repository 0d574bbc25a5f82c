//! Region statistics and heatmap rendering for captured attention maps.
//!
//! All statistics respect the causal mask: means run over unmasked cells
//! only, and column masses for a row never include columns past the
//! diagonal. Rendering is a pure function of its inputs, so rerunning a
//! configuration reproduces every SVG byte for byte.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::Matrix;
use crate::prompt::PromptTokens;
use crate::scalar::Scalar;
use crate::TokenId;

/// Colour floor for the log scale; probabilities at or below it render as
/// the lightest tone.
const LOG_FLOOR: f64 = 1e-4;
/// Largest map side [`render_heatmap`] accepts; beyond this the SVG stops
/// being useful for inspection and starts being a disk hazard.
const MAX_RENDER_SIDE: usize = 512;

const MASKED_FILL: &str = "#dddddd";
const ECS_OUTLINE: &str = "#ffd700";

#[derive(Debug, Error)]
pub enum AttnError {
    #[error("prompt has no filler region")]
    EmptyRegion,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("output file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Which attention map a statistics row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSel {
    Head(usize),
    /// Element-wise maximum over the heads of one layer. Rows of a pooled
    /// map are not distributions; its masses are upper bounds.
    MaxPool,
}

impl fmt::Display for HeadSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadSel::Head(h) => write!(f, "{h}"),
            HeadSel::MaxPool => f.write_str("max"),
        }
    }
}

/// Where one attention map sends the filler rows' mass.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub layer: usize,
    pub head: HeadSel,
    /// Mean over unmasked cells of filler rows.
    pub ecs_row_mean: f64,
    /// Mean over unmasked cells of all other rows.
    pub other_row_mean: f64,
    /// Mean over filler rows of the mass on the question span.
    pub mass_question: f64,
    /// Mass on each option span, letters A-E; zero where the prompt has no
    /// such option.
    pub option_masses: [f64; 5],
    /// Mass on the first filler column.
    pub mass_first_filler: f64,
    /// Mass on every column holding the end-of-text token.
    pub mass_eot: f64,
    /// Mean over filler rows of (max - min) attention across unmasked
    /// original-input columns.
    pub uniformity: f64,
}

/// Mean over `rows` of the total attention mass each row places on the
/// columns in `cols`, counting unmasked cells only. Empty `rows` gives 0.
pub fn span_mass<S: Scalar>(map: &Matrix<S>, rows: Range<usize>, cols: Range<usize>) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mut total = 0.0;
    for r in rows {
        let row = map.row(r);
        for c in cols.clone() {
            if c <= r {
                total += row[c].to_f64_lossy();
            }
        }
    }
    total / n
}

fn masked_cell_mean<S: Scalar>(map: &Matrix<S>, rows: impl Iterator<Item = usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in rows {
        let row = map.row(r);
        for c in 0..=r {
            sum += row[c].to_f64_lossy();
        }
        count += r + 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn stats_for_map<S: Scalar>(
    map: &Matrix<S>,
    prompt: &PromptTokens,
    eot: TokenId,
    layer: usize,
    head: HeadSel,
) -> RegionStats {
    let ecs = prompt.ecs_range.clone();
    let seq_len = prompt.tokens.len();
    let ecs_row_mean = masked_cell_mean(map, ecs.clone());
    let other_row_mean = masked_cell_mean(map, (0..seq_len).filter(|r| !ecs.contains(r)));

    let mass_question = span_mass(map, ecs.clone(), prompt.spans.question.clone());
    let mut option_masses = [0.0; 5];
    for (letter, span) in &prompt.spans.options {
        let slot = (*letter as u8 - b'A') as usize;
        if slot < 5 {
            option_masses[slot] = span_mass(map, ecs.clone(), span.clone());
        }
    }
    let mass_first_filler = span_mass(map, ecs.clone(), ecs.start..ecs.start + 1);

    let mut mass_eot = 0.0;
    for (c, tok) in prompt.tokens.iter().enumerate() {
        if *tok == eot {
            mass_eot += span_mass(map, ecs.clone(), c..c + 1);
        }
    }

    let mut uniformity_sum = 0.0;
    for r in ecs.clone() {
        let row = map.row(r);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for c in 0..=r {
            if ecs.contains(&c) {
                continue;
            }
            let v = row[c].to_f64_lossy();
            min = min.min(v);
            max = max.max(v);
            seen = true;
        }
        if seen {
            uniformity_sum += max - min;
        }
    }
    let uniformity = if ecs.is_empty() {
        0.0
    } else {
        uniformity_sum / ecs.len() as f64
    };

    RegionStats {
        layer,
        head,
        ecs_row_mean,
        other_row_mean,
        mass_question,
        option_masses,
        mass_first_filler,
        mass_eot,
        uniformity,
    }
}

/// Computes [`RegionStats`] for every captured map: one row per
/// (layer, head) plus one max-pooled row per layer.
///
/// `attentions` is the capture from a forward pass over `prompt.tokens`;
/// `eot` is the end-of-text id used for the filler-to-eot mass.
pub fn region_stats<S: Scalar>(
    attentions: &[Vec<Matrix<S>>],
    prompt: &PromptTokens,
    eot: TokenId,
) -> Result<Vec<RegionStats>, AttnError> {
    if prompt.ecs_range.is_empty() {
        return Err(AttnError::EmptyRegion);
    }
    let seq_len = prompt.tokens.len();
    let mut out = Vec::new();
    for (layer, heads) in attentions.iter().enumerate() {
        if heads.is_empty() {
            return Err(AttnError::ShapeMismatch(format!("layer {layer} has no heads")));
        }
        for (h, map) in heads.iter().enumerate() {
            if map.rows() != seq_len || map.cols() != seq_len {
                return Err(AttnError::ShapeMismatch(format!(
                    "layer {layer} head {h} map is {}x{}, prompt has {seq_len} tokens",
                    map.rows(),
                    map.cols()
                )));
            }
            out.push(stats_for_map(map, prompt, eot, layer, HeadSel::Head(h)));
        }
        let mut pooled = heads[0].clone();
        for map in &heads[1..] {
            for (p, v) in pooled.data_mut().iter_mut().zip(map.data()) {
                if *v > *p {
                    *p = *v;
                }
            }
        }
        out.push(stats_for_map(&pooled, prompt, eot, layer, HeadSel::MaxPool));
    }
    Ok(out)
}

/// Header of the CSV written by [`write_region_stats_csv`].
pub const REGION_STATS_CSV_HEADER: &str = "layer,head,ecs_row_mean,other_row_mean,mass_question,mass_option_a,mass_option_b,mass_option_c,mass_option_d,mass_option_e,mass_first_filler,mass_eot,uniformity";

pub fn write_region_stats_csv(stats: &[RegionStats], path: &Path) -> Result<(), AttnError> {
    let mut out = String::from(REGION_STATS_CSV_HEADER);
    out.push('\n');
    for s in stats {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.layer,
            s.head,
            s.ecs_row_mean,
            s.other_row_mean,
            s.mass_question,
            s.option_masses[0],
            s.option_masses[1],
            s.option_masses[2],
            s.option_masses[3],
            s.option_masses[4],
            s.mass_first_filler,
            s.mass_eot,
            s.uniformity
        ));
    }
    fs::write(path, out).map_err(|source| AttnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn heat_color(value: f64) -> String {
    let t = if value <= LOG_FLOOR {
        0.0
    } else if value >= 1.0 {
        1.0
    } else {
        (value.log10() - LOG_FLOOR.log10()) / (0.0 - LOG_FLOOR.log10())
    };
    let lerp = |a: f64, b: f64| -> u8 { (a + t * (b - a)).round() as u8 };
    // Light to dark blue.
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(247.0, 8.0),
        lerp(251.0, 48.0),
        lerp(255.0, 107.0)
    )
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one attention map as an SVG heatmap.
///
/// Colour is log-scaled with a floor at [`LOG_FLOOR`]; masked cells get a
/// neutral grey; dashed rules mark span boundaries (context, question,
/// options, rationale); the filler rows and columns are outlined in yellow.
/// Maps larger than [`MAX_RENDER_SIDE`] per side are refused.
pub fn render_heatmap<S: Scalar>(
    map: &Matrix<S>,
    prompt: &PromptTokens,
    layer: usize,
    head: HeadSel,
    path: &Path,
) -> Result<(), AttnError> {
    let side = prompt.tokens.len();
    if map.rows() != side || map.cols() != side {
        return Err(AttnError::ShapeMismatch(format!(
            "map is {}x{}, prompt has {side} tokens",
            map.rows(),
            map.cols()
        )));
    }
    if side > MAX_RENDER_SIDE {
        return Err(AttnError::ShapeMismatch(format!(
            "map side {side} exceeds render limit {MAX_RENDER_SIDE}"
        )));
    }
    let cell = 10usize;
    let margin_left = 48usize;
    let margin_top = 48usize;
    let grid = side * cell;
    let width = margin_left + grid + 12;
    let height = margin_top + grid + 12;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{margin_left}\" y=\"20\" font-family=\"monospace\" font-size=\"13\">{}</text>\n",
        xml_escape(&format!("layer {layer} head {head} ({side}x{side})"))
    ));

    for r in 0..side {
        let y = margin_top + r * cell;
        for c in 0..side {
            let x = margin_left + c * cell;
            let fill = if c > r {
                MASKED_FILL.to_string()
            } else {
                heat_color(map.get(r, c).to_f64_lossy())
            };
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\"/>\n"
            ));
        }
    }

    // Axis ticks.
    let step = (side / 16).max(1);
    for i in (0..side).step_by(step) {
        let x = margin_left + i * cell + cell / 2;
        let y = margin_top + i * cell + cell / 2 + 4;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"monospace\" font-size=\"8\" text-anchor=\"middle\">{i}</text>\n",
            margin_top - 6
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" font-family=\"monospace\" font-size=\"8\" text-anchor=\"end\">{i}</text>\n",
            margin_left - 6
        ));
    }

    // Span boundary rules.
    let mut boundaries: Vec<usize> = Vec::new();
    let add_span = |span: &Range<usize>, boundaries: &mut Vec<usize>| {
        boundaries.push(span.start);
        boundaries.push(span.end);
    };
    if let Some(span) = &prompt.spans.context {
        add_span(span, &mut boundaries);
    }
    add_span(&prompt.spans.question, &mut boundaries);
    for (_, span) in &prompt.spans.options {
        add_span(span, &mut boundaries);
    }
    if let Some(span) = &prompt.spans.rationale {
        add_span(span, &mut boundaries);
    }
    boundaries.sort_unstable();
    boundaries.dedup();
    for b in boundaries {
        let x = margin_left + b * cell;
        let y = margin_top + b * cell;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{margin_top}\" x2=\"{x}\" y2=\"{}\" stroke=\"#666666\" stroke-width=\"1\" stroke-dasharray=\"2,2\"/>\n",
            margin_top + grid
        ));
        svg.push_str(&format!(
            "<line x1=\"{margin_left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#666666\" stroke-width=\"1\" stroke-dasharray=\"2,2\"/>\n",
            margin_left + grid
        ));
    }

    // Filler band outlines: the inserted columns and the inserted rows.
    let ecs = prompt.ecs_range.clone();
    if !ecs.is_empty() {
        let x = margin_left + ecs.start * cell;
        let w = ecs.len() * cell;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{margin_top}\" width=\"{w}\" height=\"{grid}\" fill=\"none\" stroke=\"{ECS_OUTLINE}\" stroke-width=\"2\"/>\n"
        ));
        let y = margin_top + ecs.start * cell;
        svg.push_str(&format!(
            "<rect x=\"{margin_left}\" y=\"{y}\" width=\"{grid}\" height=\"{w}\" fill=\"none\" stroke=\"{ECS_OUTLINE}\" stroke-width=\"2\"/>\n"
        ));
    }

    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|source| AttnError::Io {
        path: path.to_path_buf(),
        source,
    })
}
