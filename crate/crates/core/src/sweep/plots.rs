//! Deterministic SVG line charts over aggregate CSVs.
//!
//! `emit_plots` sniffs the CSV header: a leading `checkpoint` column yields
//! `accuracy_vs_checkpoint.svg` (one line per configuration across training
//! checkpoints), otherwise `accuracy_vs_fillers.svg` (accuracy against filler
//! count, one line per filler kind and position). Output bytes depend only on
//! the CSV contents, so reruns are diff-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("plot io {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("aggregate CSV has no data rows")]
    NoData,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 168.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// One parsed data row, already reduced to what the charts need.
struct PlotRow {
    /// x value: filler count, or checkpoint index.
    x: u64,
    series: String,
    accuracy: f64,
}

struct RawRow {
    x: u64,
    task: String,
    kind: String,
    count: String,
    pos_short: String,
    accuracy: f64,
}

/// Renders charts for an aggregate CSV into `out_dir` and returns the files
/// written.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let text = fs::read_to_string(csv_path).map_err(|source| PlotError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(PlotError::NoData)?;
    let checkpoint_mode = header.starts_with("checkpoint,");
    let malformed = |line: usize, detail: String| PlotError::Malformed {
        path: csv_path.to_path_buf(),
        line: line + 1,
        detail,
    };

    let mut raw = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        // Data columns after the optional checkpoint/weights prefix:
        // task_kind, filler_kind, filler_count, position, seed_count,
        // accuracy, baseline, delta_pp, improved.
        let (expected, offset) = if checkpoint_mode { (11, 2) } else { (9, 0) };
        if fields.len() != expected {
            return Err(malformed(
                i,
                format!("expected {expected} fields, got {}", fields.len()),
            ));
        }
        let accuracy: f64 = fields[offset + 5]
            .parse()
            .map_err(|e| malformed(i, format!("accuracy: {e}")))?;
        let x: u64 = if checkpoint_mode {
            fields[0]
                .parse()
                .map_err(|e| malformed(i, format!("checkpoint: {e}")))?
        } else {
            fields[offset + 2]
                .parse()
                .map_err(|e| malformed(i, format!("filler_count: {e}")))?
        };
        let pos_short = match fields[offset + 3] {
            "before_answer_cue" => "before",
            "after_answer_cue" => "after",
            other => other,
        };
        raw.push(RawRow {
            x,
            task: fields[offset].to_string(),
            kind: fields[offset + 1].to_string(),
            count: fields[offset + 2].to_string(),
            pos_short: pos_short.to_string(),
            accuracy,
        });
    }
    if raw.is_empty() {
        return Err(PlotError::NoData);
    }

    // Series labels carry the task only when the CSV mixes tasks.
    let tasks: std::collections::BTreeSet<&str> = raw.iter().map(|r| r.task.as_str()).collect();
    let rows: Vec<PlotRow> = raw
        .iter()
        .map(|r| {
            let mut series = if checkpoint_mode {
                format!("{} m={} {}", r.kind, r.count, r.pos_short)
            } else {
                format!("{} {}", r.kind, r.pos_short)
            };
            if tasks.len() > 1 {
                series = format!("{}: {series}", r.task);
            }
            PlotRow {
                x: r.x,
                series,
                accuracy: r.accuracy,
            }
        })
        .collect();

    let (file, x_label) = if checkpoint_mode {
        ("accuracy_vs_checkpoint.svg", "checkpoint")
    } else {
        ("accuracy_vs_fillers.svg", "filler count")
    };
    fs::create_dir_all(out_dir).map_err(|source| PlotError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let out_path = out_dir.join(file);
    let svg = render_chart(&rows, x_label);
    fs::write(&out_path, svg).map_err(|source| PlotError::Io {
        path: out_path.clone(),
        source,
    })?;
    Ok(vec![out_path])
}

/// Categorical x spacing: distinct x values sit at even intervals in data
/// order, which keeps 0 next to 16 next to 8192 readable on one axis.
fn render_chart(rows: &[PlotRow], x_label: &str) -> String {
    let mut xs: Vec<u64> = rows.iter().map(|r| r.x).collect();
    xs.sort_unstable();
    xs.dedup();
    let slot = |x: u64| xs.iter().position(|&v| v == x).expect("x in slots");

    let mut series: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows {
        series
            .entry(row.series.as_str())
            .or_default()
            .push((slot(row.x), row.accuracy));
    }
    for points in series.values_mut() {
        points.sort_by_key(|&(s, _)| s);
    }

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for row in rows {
        y_min = y_min.min(row.accuracy);
        y_max = y_max.max(row.accuracy);
    }
    if (y_max - y_min).abs() < 1e-9 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |s: usize| {
        if xs.len() == 1 {
            MARGIN_LEFT + plot_w / 2.0
        } else {
            MARGIN_LEFT + plot_w * s as f64 / (xs.len() - 1) as f64
        }
    };
    let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"22\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">accuracy vs {x_label}</text>",
        MARGIN_LEFT + plot_w / 2.0
    );

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = MARGIN_LEFT + plot_w;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"#000000\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0:.2}\" y1=\"{:.2}\" x2=\"{x0:.2}\" y2=\"{y0:.2}\" stroke=\"#000000\"/>",
        MARGIN_TOP
    );

    // y ticks.
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0:.2}\" y2=\"{y:.2}\" stroke=\"#000000\"/>",
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
            x0 - 7.0,
            y + 3.5
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{x0:.2}\" y1=\"{y:.2}\" x2=\"{x1:.2}\" y2=\"{y:.2}\" stroke=\"#eeeeee\"/>"
        );
    }

    // x ticks: one per distinct value.
    for (s, &x) in xs.iter().enumerate() {
        let px = x_of(s);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{x}</text>",
            y0 + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{x_label}</text>",
        MARGIN_LEFT + plot_w / 2.0,
        y0 + 34.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">accuracy (%)</text>",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    // Series lines, points, and legend.
    for (idx, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if points.len() > 1 {
            let path: Vec<String> = points
                .iter()
                .map(|&(s, v)| format!("{:.2},{:.2}", x_of(s), y_of(v)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                path.join(" ")
            );
        }
        for &(s, v) in points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                x_of(s),
                y_of(v)
            );
        }
        let ly = MARGIN_TOP + 14.0 * idx as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ly - 3.5,
            lx + 16.0,
            ly - 3.5
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"monospace\" font-size=\"10\">{name}</text>",
            lx + 20.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::AGGREGATE_CSV_HEADER;

    fn write_csv(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn filler_chart_is_emitted_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{AGGREGATE_CSV_HEADER}\n\
             multiple_choice,space,0,before_answer_cue,3,40.000,40.000,0.000,false\n\
             multiple_choice,space,16,before_answer_cue,3,44.000,40.000,4.000,true\n\
             multiple_choice,pad,0,before_answer_cue,3,40.000,40.000,0.000,false\n\
             multiple_choice,pad,16,before_answer_cue,3,39.000,40.000,-1.000,false\n"
        );
        let csv = write_csv(dir.path(), "aggregate.csv", &body);
        let out = dir.path().join("plots");
        let first = emit_plots(&csv, &out).unwrap();
        assert_eq!(first.len(), 1);
        assert!(first[0].ends_with("accuracy_vs_fillers.svg"));
        let bytes_a = fs::read(&first[0]).unwrap();
        let again = emit_plots(&csv, &out).unwrap();
        let bytes_b = fs::read(&again[0]).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let text = String::from_utf8(bytes_a).unwrap();
        assert!(text.contains("accuracy vs filler count"));
        // One legend entry per kind/position pair and a polyline each.
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("space before"));
        assert!(text.contains("pad before"));
        // Categorical ticks for both counts.
        assert!(text.contains(">0</text>"));
        assert!(text.contains(">16</text>"));
    }

    #[test]
    fn checkpoint_header_switches_chart() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "checkpoint,weights,{AGGREGATE_CSV_HEADER}\n\
             0,a.ecsw,multiple_choice,space,16,before_answer_cue,2,40.000,38.000,2.000,true\n\
             1,b.ecsw,multiple_choice,space,16,before_answer_cue,2,47.000,41.000,6.000,true\n"
        );
        let csv = write_csv(dir.path(), "checkpoint_aggregate.csv", &body);
        let files = emit_plots(&csv, dir.path()).unwrap();
        assert!(files[0].ends_with("accuracy_vs_checkpoint.svg"));
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains("accuracy vs checkpoint"));
        assert!(text.contains("space m=16 before"));
    }

    #[test]
    fn empty_and_malformed_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(dir.path(), "empty.csv", &format!("{AGGREGATE_CSV_HEADER}\n"));
        assert!(matches!(emit_plots(&csv, dir.path()), Err(PlotError::NoData)));

        let csv = write_csv(dir.path(), "short.csv", &format!("{AGGREGATE_CSV_HEADER}\na,b\n"));
        match emit_plots(&csv, dir.path()) {
            Err(PlotError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }

        let missing = dir.path().join("absent.csv");
        assert!(matches!(emit_plots(&missing, dir.path()), Err(PlotError::Io { .. })));
    }

    #[test]
    fn flat_series_still_renders_with_padded_range() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{AGGREGATE_CSV_HEADER}\n\
             free_form_math,enter,0,after_answer_cue,1,50.000,50.000,0.000,false\n"
        );
        let csv = write_csv(dir.path(), "flat.csv", &body);
        let files = emit_plots(&csv, dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        // Single point: no polyline, one circle.
        assert_eq!(text.matches("<polyline").count(), 0);
        assert_eq!(text.matches("<circle").count(), 1);
    }
}
