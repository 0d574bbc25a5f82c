//! Prompt assembly: template segments, filler insertion around the answer
//! cue, and extraction of the hidden vectors the fillers add.
//!
//! Every text piece (separator, prefix, question, each option, ...) is
//! encoded separately and the token chunks concatenated, so a span of the
//! final sequence always decodes back to its source text and filler
//! insertion can never merge across a span boundary.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{TaskKind, TaskSample};
use crate::linalg::Matrix;
use crate::model::ForwardResult;
use crate::scalar::Scalar;
use crate::tokenizer::{FillerKind, VocabError, Vocabulary};
use crate::TokenId;

/// Where a filler run goes relative to the final answer cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerPosition {
    /// Between the task text and the cue; the cue stays the final token.
    BeforeAnswerCue,
    /// After the cue, at the very end of the sequence.
    AfterAnswerCue,
}

impl FillerPosition {
    pub const ALL: [FillerPosition; 2] =
        [FillerPosition::BeforeAnswerCue, FillerPosition::AfterAnswerCue];

    pub fn name(self) -> &'static str {
        match self {
            FillerPosition::BeforeAnswerCue => "before_answer_cue",
            FillerPosition::AfterAnswerCue => "after_answer_cue",
        }
    }
}

impl std::fmt::Display for FillerPosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FillerPosition {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, PromptError> {
        match s {
            "before" | "before_answer_cue" => Ok(FillerPosition::BeforeAnswerCue),
            "after" | "after_answer_cue" => Ok(FillerPosition::AfterAnswerCue),
            other => Err(PromptError::TemplateInvalid(format!(
                "unknown filler position `{other}`"
            ))),
        }
    }
}

/// A filler run to insert: which token, how many, where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillerSpec {
    pub kind: FillerKind,
    pub count: usize,
    pub position: FillerPosition,
}

/// Prompt building blocks, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    ChatTemplate,
    Instruction,
    Context,
    Question,
    Options,
    Rationale,
    AnswerCue,
}

impl SegmentKind {
    const ORDER: [SegmentKind; 7] = [
        SegmentKind::ChatTemplate,
        SegmentKind::Instruction,
        SegmentKind::Context,
        SegmentKind::Question,
        SegmentKind::Options,
        SegmentKind::Rationale,
        SegmentKind::AnswerCue,
    ];

    fn canonical_index(self) -> usize {
        SegmentKind::ORDER
            .iter()
            .position(|s| *s == self)
            .expect("segment kind is in the canonical order")
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("assembled prompt has {length} tokens, exceeding max context {max_context}")]
    ContextOverflow { length: usize, max_context: usize },
    #[error("vocabulary has no entry for {0}")]
    MissingVocabEntry(String),
    #[error("invalid template: {0}")]
    TemplateInvalid(String),
    #[error("template file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("forward result was captured without hidden states")]
    CaptureMissing,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Declarative prompt layout. Segments must appear in canonical order and
/// end with the answer cue; segments whose content is absent on a given
/// sample emit nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub segments: Vec<SegmentKind>,
    #[serde(default = "default_separator")]
    pub separator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

fn default_separator() -> String {
    "\n".into()
}

impl PromptTemplate {
    /// Bare task layout: context, question, options, rationale, cue.
    pub fn standard() -> Self {
        PromptTemplate {
            segments: vec![
                SegmentKind::Context,
                SegmentKind::Question,
                SegmentKind::Options,
                SegmentKind::Rationale,
                SegmentKind::AnswerCue,
            ],
            separator: default_separator(),
            chat_template: None,
            instruction: None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.segments.is_empty() {
            return Err(PromptError::TemplateInvalid("no segments".into()));
        }
        let mut last = None;
        for seg in &self.segments {
            let idx = seg.canonical_index();
            if let Some(prev) = last {
                if idx <= prev {
                    return Err(PromptError::TemplateInvalid(format!(
                        "segments out of canonical order at `{seg:?}`"
                    )));
                }
            }
            last = Some(idx);
        }
        if self.segments.last() != Some(&SegmentKind::AnswerCue) {
            return Err(PromptError::TemplateInvalid(
                "last segment must be the answer cue".into(),
            ));
        }
        if !self.segments.contains(&SegmentKind::Question) {
            return Err(PromptError::TemplateInvalid(
                "template must include the question segment".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PromptError> {
        let template: PromptTemplate = toml::from_str(text)
            .map_err(|e| PromptError::TemplateInvalid(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        PromptTemplate::from_toml_str(&text)
    }
}

/// Token index ranges of the task content inside an assembled prompt.
/// Each range decodes back to exactly its source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanAnnotations {
    pub context: Option<Range<usize>>,
    pub question: Range<usize>,
    pub options: Vec<(char, Range<usize>)>,
    pub rationale: Option<Range<usize>>,
}

/// An assembled prompt plus the bookkeeping the analyses need.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTokens {
    pub tokens: Vec<TokenId>,
    /// Token count before filler insertion.
    pub base_len: usize,
    /// Positions holding inserted filler tokens (empty for a bare prompt).
    pub ecs_range: Range<usize>,
    /// Position of the answer cue token.
    pub answer_cue_index: usize,
    pub spans: SpanAnnotations,
}

impl PromptTokens {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn filler_count(&self) -> usize {
        self.ecs_range.len()
    }
}

/// The per-layer hidden vectors contributed by the inserted fillers: for a
/// model with `L` blocks, `L + 1` matrices of shape
/// `filler_count x hidden_dim` (embedding first, then each block output).
#[derive(Debug, Clone, PartialEq)]
pub struct EcsTensor<S> {
    pub layers: Vec<Matrix<S>>,
}

impl<S: Scalar> EcsTensor<S> {
    pub fn filler_count(&self) -> usize {
        self.layers.first().map_or(0, Matrix::rows)
    }
}

/// Assembles the prompt without any fillers.
pub fn assemble_base(
    sample: &TaskSample,
    template: &PromptTemplate,
    vocab: &Vocabulary,
    max_context: usize,
) -> Result<PromptTokens, PromptError> {
    let prompt = build_base(sample, template, vocab)?;
    if prompt.tokens.len() > max_context {
        return Err(PromptError::ContextOverflow {
            length: prompt.tokens.len(),
            max_context,
        });
    }
    Ok(prompt)
}

/// Assembles the prompt and inserts the filler run. With `count == 0` the
/// result is identical to [`assemble_base`] apart from an empty
/// `ecs_range` anchored at the insertion point.
pub fn assemble(
    sample: &TaskSample,
    filler: &FillerSpec,
    template: &PromptTemplate,
    vocab: &Vocabulary,
    max_context: usize,
) -> Result<PromptTokens, PromptError> {
    let mut prompt = build_base(sample, template, vocab)?;
    let run = vocab.filler_ids(filler.kind, filler.count)?;
    match filler.position {
        FillerPosition::BeforeAnswerCue => {
            let at = prompt.answer_cue_index;
            prompt.tokens.splice(at..at, run);
            prompt.ecs_range = at..at + filler.count;
            prompt.answer_cue_index += filler.count;
        }
        FillerPosition::AfterAnswerCue => {
            let at = prompt.tokens.len();
            prompt.tokens.extend(run);
            prompt.ecs_range = at..at + filler.count;
        }
    }
    if prompt.tokens.len() > max_context {
        return Err(PromptError::ContextOverflow {
            length: prompt.tokens.len(),
            max_context,
        });
    }
    Ok(prompt)
}

fn build_base(
    sample: &TaskSample,
    template: &PromptTemplate,
    vocab: &Vocabulary,
) -> Result<PromptTokens, PromptError> {
    template.validate()?;
    let cue = vocab
        .answer_cue_id()
        .ok_or_else(|| PromptError::MissingVocabEntry("the answer cue".into()))?;
    if sample.kind == TaskKind::MultipleChoice
        && !sample.options.is_empty()
        && !template.segments.contains(&SegmentKind::Options)
    {
        return Err(PromptError::TemplateInvalid(
            "multiple-choice sample needs an options segment".into(),
        ));
    }
    let sep = vocab.encode(&template.separator);
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut spans = SpanAnnotations::default();
    let mut emitted = false;
    let begin = |tokens: &mut Vec<TokenId>, emitted: &mut bool| {
        if *emitted {
            tokens.extend_from_slice(&sep);
        }
        *emitted = true;
    };
    for seg in &template.segments {
        match seg {
            SegmentKind::ChatTemplate => {
                if let Some(text) = &template.chat_template {
                    begin(&mut tokens, &mut emitted);
                    tokens.extend(vocab.encode(text));
                }
            }
            SegmentKind::Instruction => {
                if let Some(text) = &template.instruction {
                    begin(&mut tokens, &mut emitted);
                    tokens.extend(vocab.encode(text));
                }
            }
            SegmentKind::Context => {
                if let Some(text) = &sample.context {
                    begin(&mut tokens, &mut emitted);
                    tokens.extend(vocab.encode("Context: "));
                    let start = tokens.len();
                    tokens.extend(vocab.encode(text));
                    spans.context = Some(start..tokens.len());
                }
            }
            SegmentKind::Question => {
                begin(&mut tokens, &mut emitted);
                tokens.extend(vocab.encode("Question: "));
                let start = tokens.len();
                tokens.extend(vocab.encode(&sample.question));
                spans.question = start..tokens.len();
            }
            SegmentKind::Options => {
                for opt in &sample.options {
                    begin(&mut tokens, &mut emitted);
                    let label_id = vocab.option_id(opt.label).ok_or_else(|| {
                        PromptError::MissingVocabEntry(format!("option letter `{}`", opt.label))
                    })?;
                    tokens.push(label_id);
                    tokens.extend(vocab.encode(". "));
                    let start = tokens.len();
                    tokens.extend(vocab.encode(&opt.text));
                    spans.options.push((opt.label, start..tokens.len()));
                }
            }
            SegmentKind::Rationale => {
                if let Some(text) = &sample.rationale {
                    begin(&mut tokens, &mut emitted);
                    let start = tokens.len();
                    tokens.extend(vocab.encode(text));
                    spans.rationale = Some(start..tokens.len());
                }
            }
            SegmentKind::AnswerCue => {
                begin(&mut tokens, &mut emitted);
                tokens.push(cue);
            }
        }
    }
    let base_len = tokens.len();
    Ok(PromptTokens {
        tokens,
        base_len,
        ecs_range: base_len..base_len,
        answer_cue_index: base_len - 1,
        spans,
    })
}

/// Slices the rows at `prompt.ecs_range` out of every captured hidden-state
/// matrix: the vectors present in the widened computation and absent from
/// the bare one.
pub fn extract_ecs<S: Scalar>(
    result: &ForwardResult<S>,
    prompt: &PromptTokens,
) -> Result<EcsTensor<S>, PromptError> {
    let states = result
        .hidden_states
        .as_ref()
        .ok_or(PromptError::CaptureMissing)?;
    let layers = states
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.rows() != prompt.tokens.len() {
                return Err(PromptError::ShapeMismatch(format!(
                    "hidden state {i} has {} rows, prompt has {} tokens",
                    m.rows(),
                    prompt.tokens.len()
                )));
            }
            Ok(m.take_rows(prompt.ecs_range.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EcsTensor { layers })
}
