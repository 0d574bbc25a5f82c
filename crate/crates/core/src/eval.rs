//! Scoring, answer extraction, and accuracy aggregation.
//!
//! Multiple choice is scored by a softmax restricted to the option-letter
//! logits. Free-form math is scored by extracting a canonical answer string
//! from the generated text with a fixed rule table:
//!
//! 1. the content of the last `\boxed{...}` (kept if it is a bare number,
//!    otherwise the first number inside it),
//! 2. else the first number after the last case-insensitive `answer is`,
//! 3. else the last number anywhere,
//! 4. else no answer.
//!
//! Extracted values are normalised: surrounding whitespace and leading
//! currency symbols dropped (also after a minus sign), commas removed,
//! trailing periods stripped; the sign, decimal points, and `a/b` fractions
//! survive.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::TaskKind;
use crate::prompt::FillerPosition;
use crate::scalar::Scalar;
use crate::tokenizer::FillerKind;
use crate::TokenId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scoring configuration error: {0}")]
    Config(String),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("inconsistent seed sets across configurations: {0}")]
    SeedMismatch(String),
    #[error("no zero-filler baseline for {0}")]
    MissingBaseline(String),
    #[error("records file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("records file {path}, line {line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

/// Probability assigned to one option letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionProb {
    pub letter: char,
    pub probability: f64,
}

/// Outcome of restricted-softmax scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct McScore {
    /// One entry per option, in the order given; probabilities sum to 1.
    pub probabilities: Vec<OptionProb>,
    pub predicted: char,
}

/// Softmax over the logits of the given option tokens only; everything else
/// in the vocabulary is ignored. The prediction is the highest-probability
/// letter, ties resolved to the lowest letter.
pub fn score_multiple_choice<S: Scalar>(
    logits: &[S],
    options: &[(char, TokenId)],
) -> Result<McScore, EvalError> {
    if options.is_empty() {
        return Err(EvalError::Config("no options to score".into()));
    }
    for (i, (letter, id)) in options.iter().enumerate() {
        if id.index() >= logits.len() {
            return Err(EvalError::Config(format!(
                "option `{letter}` id {id} is outside the logit vector (len {})",
                logits.len()
            )));
        }
        for (other_letter, other_id) in &options[i + 1..] {
            if id == other_id {
                return Err(EvalError::Config(format!(
                    "options `{letter}` and `{other_letter}` share token id {id}"
                )));
            }
            if letter == other_letter {
                return Err(EvalError::Config(format!(
                    "option letter `{letter}` appears twice"
                )));
            }
        }
    }
    let raw: Vec<f64> = options
        .iter()
        .map(|(_, id)| logits[id.index()].to_f64_lossy())
        .collect();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&x| (x - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let probabilities: Vec<OptionProb> = options
        .iter()
        .zip(&exps)
        .map(|((letter, _), &e)| OptionProb {
            letter: *letter,
            probability: e / denom,
        })
        .collect();
    let best = probabilities
        .iter()
        .map(|p| p.probability)
        .fold(f64::NEG_INFINITY, f64::max);
    let predicted = probabilities
        .iter()
        .filter(|p| p.probability == best)
        .map(|p| p.letter)
        .min()
        .expect("at least one option");
    Ok(McScore {
        probabilities,
        predicted,
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"-?(?:\$|€|£)?\d[\d,]*(?:\.\d+)?(?:/\d+)?").expect("valid regex")
    })
}

fn full_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^-?(?:\$|€|£)?\d[\d,]*(?:\.\d+)?(?:/\d+)?$").expect("valid regex")
    })
}

fn answer_phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s+is\s*:?\s*").expect("valid regex"))
}

fn normalize_answer(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    // The sign survives normalization; currency symbols may sit between the
    // sign and the digits ("-$3").
    let (negative, rest) = match trimmed.strip_prefix('-') {
        Some(rest) => (true, rest.trim_start()),
        None => (false, trimmed),
    };
    let mut s = rest.to_string();
    loop {
        let next = s
            .strip_prefix('$')
            .or_else(|| s.strip_prefix('€'))
            .or_else(|| s.strip_prefix('£'));
        match next {
            Some(rest) => s = rest.trim_start().to_string(),
            None => break,
        }
    }
    s.retain(|c| c != ',');
    while s.ends_with('.') {
        s.pop();
    }
    let s = s.trim();
    if s.is_empty() {
        None
    } else if negative {
        Some(format!("-{s}"))
    } else {
        Some(s.to_string())
    }
}

/// Content of the last `\boxed{...}`, with balanced inner braces.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")?;
    let inner_start = start + "\\boxed{".len();
    let mut depth = 1usize;
    for (offset, ch) in text[inner_start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[inner_start..inner_start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Pulls a canonical answer string out of generated text using the rule
/// table in the module docs. Returns `None` when no rule matches.
pub fn extract_math_answer(text: &str) -> Option<String> {
    if let Some(content) = last_boxed(text) {
        let trimmed = content.trim();
        if full_number_re().is_match(trimmed) {
            return normalize_answer(trimmed);
        }
        return number_re()
            .find(trimmed)
            .and_then(|m| normalize_answer(m.as_str()));
    }
    if let Some(phrase) = answer_phrase_re().find_iter(text).last() {
        if let Some(m) = number_re().find(&text[phrase.end()..]) {
            return normalize_answer(m.as_str());
        }
    }
    number_re()
        .find_iter(text)
        .last()
        .and_then(|m| normalize_answer(m.as_str()))
}

/// One scored sample under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub task_kind: TaskKind,
    pub filler_kind: FillerKind,
    pub filler_count: usize,
    pub position: FillerPosition,
    pub seed: u64,
    /// Predicted letter or extracted answer; `None` when nothing was
    /// extracted.
    pub predicted: Option<String>,
    pub gold: String,
    pub correct: bool,
    /// Restricted-softmax distribution; multiple-choice records only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<OptionProb>>,
}

/// Accuracy of one configuration against its zero-filler baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task_kind: TaskKind,
    pub filler_kind: FillerKind,
    pub filler_count: usize,
    pub position: FillerPosition,
    pub seed_count: usize,
    /// Percent, averaged over seeds.
    pub accuracy: f64,
    /// Percent accuracy of the same (task, kind, position) family at zero
    /// fillers.
    pub baseline: f64,
    /// `accuracy - baseline`, percentage points.
    pub delta_pp: f64,
    /// Strictly positive delta.
    pub improved: bool,
}

type GroupKey = (TaskKind, FillerKind, usize, FillerPosition);

/// Groups records by configuration, averages per-seed accuracy, and attaches
/// the zero-filler baseline of each (task, kind, position) family.
///
/// Preconditions: at least one record, every configuration seen under the
/// same seed set, and every family present at zero fillers.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<AggregateRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut groups: BTreeMap<GroupKey, BTreeMap<u64, (u64, u64)>> = BTreeMap::new();
    for r in records {
        let key = (r.task_kind, r.filler_kind, r.filler_count, r.position);
        let seeds = groups.entry(key).or_default();
        let (correct, total) = seeds.entry(r.seed).or_insert((0, 0));
        if r.correct {
            *correct += 1;
        }
        *total += 1;
    }
    let all_seeds: BTreeSet<u64> = groups
        .values()
        .flat_map(|seeds| seeds.keys().copied())
        .collect();
    for (key, seeds) in &groups {
        let mine: BTreeSet<u64> = seeds.keys().copied().collect();
        if mine != all_seeds {
            return Err(EvalError::SeedMismatch(format!(
                "configuration {key:?} has seeds {mine:?}, others have {all_seeds:?}"
            )));
        }
    }
    let accuracy_of = |seeds: &BTreeMap<u64, (u64, u64)>| -> f64 {
        let per_seed: Vec<f64> = seeds
            .values()
            .map(|&(correct, total)| 100.0 * correct as f64 / total as f64)
            .collect();
        per_seed.iter().sum::<f64>() / per_seed.len() as f64
    };
    let mut baselines: BTreeMap<(TaskKind, FillerKind, FillerPosition), f64> = BTreeMap::new();
    for ((task, kind, count, position), seeds) in &groups {
        if *count == 0 {
            baselines.insert((*task, *kind, *position), accuracy_of(seeds));
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((task, kind, count, position), seeds) in &groups {
        let baseline = *baselines.get(&(*task, *kind, *position)).ok_or_else(|| {
            EvalError::MissingBaseline(format!("({task}, {kind}, {position})"))
        })?;
        let accuracy = accuracy_of(seeds);
        let delta_pp = accuracy - baseline;
        rows.push(AggregateRow {
            task_kind: *task,
            filler_kind: *kind,
            filler_count: *count,
            position: *position,
            seed_count: seeds.len(),
            accuracy,
            baseline,
            delta_pp,
            improved: delta_pp > 0.0,
        });
    }
    Ok(rows)
}

/// Header of the aggregate CSV written by [`write_aggregate_csv`].
pub const AGGREGATE_CSV_HEADER: &str =
    "task_kind,filler_kind,filler_count,position,seed_count,accuracy,baseline,delta_pp,improved";

/// Renders one aggregate row in the CSV column order, percentages at three
/// decimals.
pub fn aggregate_csv_line(row: &AggregateRow) -> String {
    format!(
        "{},{},{},{},{},{:.3},{:.3},{:.3},{}",
        row.task_kind,
        row.filler_kind,
        row.filler_count,
        row.position,
        row.seed_count,
        row.accuracy,
        row.baseline,
        row.delta_pp,
        row.improved
    )
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&aggregate_csv_line(row));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_records_jsonl(path: &Path, records: &[RunRecord]) -> Result<(), EvalError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<RunRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| EvalError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> Vec<(char, TokenId)> {
        ('A'..)
            .take(n)
            .enumerate()
            .map(|(i, letter)| (letter, TokenId(i as u32)))
            .collect()
    }

    #[test]
    fn restricted_softmax_matches_hand_computation() {
        // exp(0)=1 three times, exp(ln 3)=3: probabilities 1/6,1/6,1/6,1/2.
        let logits = vec![0.0f64, 0.0, 0.0, 3.0f64.ln(), 99.0];
        let score = score_multiple_choice(&logits, &opts(4)).unwrap();
        assert_eq!(score.predicted, 'D');
        let ps: Vec<f64> = score.probabilities.iter().map(|p| p.probability).collect();
        assert!((ps[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((ps[3] - 0.5).abs() < 1e-12);
        let sum: f64 = ps.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_the_lowest_letter() {
        let logits = vec![2.5f64, 2.5, 2.5];
        let score = score_multiple_choice(&logits, &opts(3)).unwrap();
        assert_eq!(score.predicted, 'A');
        // Order of the options slice does not change the rule.
        let shuffled = vec![('C', TokenId(2)), ('A', TokenId(0)), ('B', TokenId(1))];
        let score = score_multiple_choice(&logits, &shuffled).unwrap();
        assert_eq!(score.predicted, 'A');
    }

    #[test]
    fn scoring_rejects_bad_configurations() {
        let logits = vec![0.0f64; 4];
        let dup_id = vec![('A', TokenId(1)), ('B', TokenId(1)), ('C', TokenId(2))];
        assert!(matches!(
            score_multiple_choice(&logits, &dup_id),
            Err(EvalError::Config(_))
        ));
        let dup_letter = vec![('A', TokenId(0)), ('A', TokenId(1)), ('B', TokenId(2))];
        assert!(score_multiple_choice(&logits, &dup_letter).is_err());
        let out_of_range = vec![('A', TokenId(0)), ('B', TokenId(9))];
        assert!(score_multiple_choice(&logits, &out_of_range).is_err());
        assert!(score_multiple_choice(&logits, &[]).is_err());
    }

    #[test]
    fn extraction_rule_table_spot_checks() {
        let cases = [
            ("The answer is 42.", Some("42")),
            ("So the ANSWER IS: $1,234", Some("1234")),
            ("I think 12 then 15 then 19", Some("19")),
            ("the result equals \\boxed{3/4} exactly", Some("3/4")),
            ("\\boxed{1} no wait \\boxed{2}", Some("2")),
            ("no numbers here", None),
            ("", None),
        ];
        for (input, expected) in cases {
            assert_eq!(
                extract_math_answer(input).as_deref(),
                expected,
                "input {input:?}"
            );
        }
    }

    #[test]
    fn extraction_is_idempotent_on_its_own_output() {
        for text in [
            "The answer is 42",
            "totals $1,234.50 overall",
            "fraction 3/4 case",
            "negative -7 case",
        ] {
            let first = extract_math_answer(text).unwrap();
            let again = extract_math_answer(&first).unwrap();
            assert_eq!(first, again);
        }
    }

    fn record(
        count: usize,
        seed: u64,
        correct: bool,
        idx: usize,
    ) -> RunRecord {
        RunRecord {
            sample_id: format!("s{idx}"),
            task_kind: TaskKind::MultipleChoice,
            filler_kind: FillerKind::Space,
            filler_count: count,
            position: FillerPosition::BeforeAnswerCue,
            seed,
            predicted: Some("A".into()),
            gold: "A".into(),
            correct,
            probabilities: None,
        }
    }

    #[test]
    fn aggregation_averages_seeds_and_attaches_baselines() {
        let mut records = Vec::new();
        // M=0: seed 0 -> 50%, seed 1 -> 70%. M=16: seed 0 -> 80%, seed 1 -> 90%.
        for i in 0..10 {
            records.push(record(0, 0, i < 5, i));
            records.push(record(0, 1, i < 7, i));
            records.push(record(16, 0, i < 8, i));
            records.push(record(16, 1, i < 9, i));
        }
        let rows = aggregate(&records).unwrap();
        assert_eq!(rows.len(), 2);
        let base = &rows[0];
        assert_eq!(base.filler_count, 0);
        assert_eq!(base.seed_count, 2);
        assert!((base.accuracy - 60.0).abs() < 1e-12);
        assert!((base.delta_pp - 0.0).abs() < 1e-12);
        assert!(!base.improved);
        let wide = &rows[1];
        assert_eq!(wide.filler_count, 16);
        assert!((wide.accuracy - 85.0).abs() < 1e-12);
        assert!((wide.baseline - 60.0).abs() < 1e-12);
        assert!((wide.delta_pp - 25.0).abs() < 1e-12);
        assert!(wide.improved);
    }

    #[test]
    fn aggregation_preconditions_are_enforced() {
        assert!(matches!(aggregate(&[]), Err(EvalError::NoRecords)));

        let no_baseline: Vec<RunRecord> = (0..4).map(|i| record(16, 0, true, i)).collect();
        assert!(matches!(
            aggregate(&no_baseline),
            Err(EvalError::MissingBaseline(_))
        ));

        let mut mismatched = vec![record(0, 0, true, 0), record(0, 1, true, 1)];
        mismatched.push(record(16, 0, true, 2)); // seed 1 missing at M=16
        assert!(matches!(
            aggregate(&mismatched),
            Err(EvalError::SeedMismatch(_))
        ));
    }

    #[test]
    fn all_correct_single_group_is_its_own_baseline() {
        let records: Vec<RunRecord> = (0..5).map(|i| record(0, 3, true, i)).collect();
        let rows = aggregate(&records).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(format!("{:.3}", rows[0].accuracy), "100.000");
        assert_eq!(format!("{:.3}", rows[0].delta_pp), "0.000");
        assert!(!rows[0].improved);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records: Vec<RunRecord> = (0..6).map(|i| record(16, 1, i % 2 == 0, i)).collect();
        write_records_jsonl(&path, &records).unwrap();
        assert_eq!(read_records_jsonl(&path).unwrap(), records);

        fs::write(&path, "{broken\n").unwrap();
        assert!(matches!(
            read_records_jsonl(&path),
            Err(EvalError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn aggregate_csv_has_stable_three_decimal_formatting() {
        let row = AggregateRow {
            task_kind: TaskKind::MultipleChoice,
            filler_kind: FillerKind::Space,
            filler_count: 64,
            position: FillerPosition::BeforeAnswerCue,
            seed_count: 3,
            accuracy: 43.92,
            baseline: 40.639,
            delta_pp: 3.281,
            improved: true,
        };
        assert_eq!(
            aggregate_csv_line(&row),
            "multiple_choice,space,64,before_answer_cue,3,43.920,40.639,3.281,true"
        );
    }
}
