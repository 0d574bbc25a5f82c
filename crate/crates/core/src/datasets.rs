//! Task samples: JSONL loading with per-line diagnostics and deterministic
//! synthetic task generation.
//!
//! A malformed line never aborts a load and never disappears silently; it
//! becomes a [`RecordIssue`] carrying its line number.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What the model is asked to produce for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Pick one option letter; scored by restricted softmax over the letters.
    MultipleChoice,
    /// Generate text; scored by rule-based answer extraction.
    FreeFormMath,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::FreeFormMath => "free_form_math",
        }
    }

    /// Short tag used in generated ids and file names.
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::MultipleChoice => "mc",
            TaskKind::FreeFormMath => "math",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s {
            "multiple_choice" | "mc" => Ok(TaskKind::MultipleChoice),
            "free_form_math" | "math" => Ok(TaskKind::FreeFormMath),
            other => Err(DatasetError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOption {
    pub label: char,
    pub text: String,
}

/// One task instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSample {
    pub id: String,
    pub kind: TaskKind,
    pub context: Option<String>,
    pub question: String,
    /// Present for multiple choice, empty for free-form math.
    pub options: Vec<TaskOption>,
    /// Gold label letter for multiple choice, gold answer string for math.
    pub gold: String,
    /// Optional chain-of-thought text carried into the prompt.
    pub rationale: Option<String>,
    /// Pass-through grouping tag, e.g. a topic name.
    pub category: Option<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown task kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    /// The line is not valid JSON for the record shape.
    Parse,
    /// The record parsed but violates a schema rule.
    Schema,
}

/// One rejected input line.
#[derive(Debug, Clone)]
pub struct RecordIssue {
    /// 1-based line number in the source file.
    pub line: usize,
    pub kind: IssueKind,
    pub message: String,
}

/// Result of loading a JSONL file: valid samples plus every rejected line.
#[derive(Debug)]
pub struct LoadOutcome {
    pub samples: Vec<TaskSample>,
    pub issues: Vec<RecordIssue>,
}

/// On-disk record shape. The task kind is not stored per line; a file holds
/// one kind and the caller states it.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context: Option<String>,
    question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    options: Vec<TaskOption>,
    gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
}

impl TaskSample {
    /// Schema rules: non-empty id and question; multiple choice carries 3-5
    /// options labelled consecutively from `A` with the gold letter among
    /// them; math carries no options and a non-empty gold string.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.is_empty() {
            return Err("empty question".into());
        }
        match self.kind {
            TaskKind::MultipleChoice => {
                if !(3..=5).contains(&self.options.len()) {
                    return Err(format!(
                        "{} options, expected 3 to 5",
                        self.options.len()
                    ));
                }
                for (i, opt) in self.options.iter().enumerate() {
                    let expected = (b'A' + i as u8) as char;
                    if opt.label != expected {
                        return Err(format!(
                            "option {i} labelled `{}`, expected `{expected}`",
                            opt.label
                        ));
                    }
                }
                let mut gold_chars = self.gold.chars();
                let gold_letter = match (gold_chars.next(), gold_chars.next()) {
                    (Some(c), None) => c,
                    _ => return Err(format!("gold `{}` is not a single letter", self.gold)),
                };
                if !self.options.iter().any(|o| o.label == gold_letter) {
                    return Err(format!("gold letter `{gold_letter}` is not an option"));
                }
            }
            TaskKind::FreeFormMath => {
                if !self.options.is_empty() {
                    return Err("math samples must not carry options".into());
                }
                if self.gold.is_empty() {
                    return Err("empty gold answer".into());
                }
            }
        }
        Ok(())
    }
}

/// Loads a JSONL dataset of the given kind. Bad lines become issues; the
/// only hard error is an unreadable file.
pub fn load_samples(path: &Path, kind: TaskKind) -> Result<LoadOutcome, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut samples = Vec::new();
    let mut issues = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                issues.push(RecordIssue {
                    line: line_no,
                    kind: IssueKind::Parse,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let sample = TaskSample {
            id: raw.id,
            kind,
            context: raw.context,
            question: raw.question,
            options: raw.options,
            gold: raw.gold,
            rationale: raw.rationale,
            category: raw.category,
        };
        if let Err(message) = sample.validate() {
            issues.push(RecordIssue {
                line: line_no,
                kind: IssueKind::Schema,
                message,
            });
            continue;
        }
        if !seen_ids.insert(sample.id.clone()) {
            issues.push(RecordIssue {
                line: line_no,
                kind: IssueKind::Schema,
                message: format!("duplicate id `{}`", sample.id),
            });
            continue;
        }
        samples.push(sample);
    }
    Ok(LoadOutcome { samples, issues })
}

/// Writes samples in the JSONL record shape, one per line.
pub fn write_samples(path: &Path, samples: &[TaskSample]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for s in samples {
        let raw = RawRecord {
            id: s.id.clone(),
            context: s.context.clone(),
            question: s.question.clone(),
            options: s.options.clone(),
            gold: s.gold.clone(),
            rationale: s.rationale.clone(),
            category: s.category.clone(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("record serialises"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Generates `n` trivially solvable arithmetic samples. Pure function of
/// its arguments: the same `(seed, n, kind)` always yields the same list,
/// ids are unique, and all text stays inside the standard vocabulary.
pub fn generate_synthetic(seed: u64, n: usize, kind: TaskKind) -> Vec<TaskSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let a: u32 = rng.random_range(2..=20);
        let b: u32 = rng.random_range(2..=20);
        let sum = a + b;
        let sample = match kind {
            TaskKind::MultipleChoice => {
                let option_count = rng.random_range(3..=5usize);
                let correct_slot = rng.random_range(0..option_count);
                let mut values = Vec::with_capacity(option_count);
                for slot in 0..option_count {
                    if slot == correct_slot {
                        values.push(sum);
                        continue;
                    }
                    loop {
                        let offset = rng.random_range(1..=9u32);
                        let candidate = if rng.random_bool(0.5) {
                            sum + offset
                        } else {
                            sum.saturating_sub(offset)
                        };
                        if candidate != sum && !values.contains(&candidate) {
                            values.push(candidate);
                            break;
                        }
                    }
                }
                let options: Vec<TaskOption> = values
                    .iter()
                    .enumerate()
                    .map(|(slot, v)| TaskOption {
                        label: (b'A' + slot as u8) as char,
                        text: v.to_string(),
                    })
                    .collect();
                let gold = options[correct_slot].label.to_string();
                TaskSample {
                    id: format!("syn-mc-{seed}-{i:04}"),
                    kind,
                    context: None,
                    question: format!("Which option equals {a} plus {b}?"),
                    options,
                    gold,
                    rationale: None,
                    category: Some("arithmetic".into()),
                }
            }
            TaskKind::FreeFormMath => TaskSample {
                id: format!("syn-math-{seed}-{i:04}"),
                kind,
                context: None,
                question: format!("What is {a} plus {b}?"),
                options: Vec::new(),
                gold: sum.to_string(),
                rationale: Some(format!("Adding {a} and {b} gives {sum}.")),
                category: Some("arithmetic".into()),
            },
        };
        debug_assert!(sample.validate().is_ok());
        out.push(sample);
    }
    out
}
