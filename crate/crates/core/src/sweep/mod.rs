//! Resumable experiment grids over filler kind, count, position, and seed.
//!
//! A grid run writes, under `output_dir`:
//!
//! * `records/<cell>.jsonl`: per-sample records for each grid cell,
//! * `manifest.jsonl`: one line per finished cell, used to resume,
//! * `aggregate.csv`: per-configuration accuracy with zero-filler baselines,
//! * `attn/<cell>/`: region statistics and heatmaps when capture is on.
//!
//! Cells run in parallel on a bounded worker pool; everything written is a
//! deterministic function of the config and weight files, so interrupting a
//! run and resuming it converges on byte-identical outputs.

mod manifest;
mod plots;

pub use manifest::{fnv1a_hex, read_manifest, CellStatus, ManifestEntry, ManifestWriter};
pub use plots::{emit_plots, PlotError};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attn::{region_stats, render_heatmap, write_region_stats_csv, AttnError, HeadSel};
use crate::datasets::{generate_synthetic, load_samples, DatasetError, TaskKind, TaskSample};
use crate::eval::{
    aggregate, extract_math_answer, read_records_jsonl, score_multiple_choice,
    write_aggregate_csv, write_records_jsonl, EvalError, RunRecord,
};
use crate::model::{
    forward, greedy_decode, CaptureOptions, ModelConfig, ModelError, WeightError,
};
use crate::prompt::{
    assemble, extract_ecs, FillerPosition, FillerSpec, PromptError, PromptTemplate, PromptTokens,
};
use crate::tokenizer::{FillerKind, VocabError, Vocabulary};
use crate::WeightSet64;

/// Filler counts swept when a config does not narrow them.
pub const DEFAULT_COUNT_GRID: [usize; 11] =
    [0, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192];

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "ECS_WORKERS";

/// Maps larger than this per side are not rendered (statistics still are).
const RENDER_SIDE_LIMIT: usize = 512;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep config: {0}")]
    Config(String),
    #[error("sweep config file {path}: {detail}")]
    ConfigFile { path: PathBuf, detail: String },
    #[error("sweep file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Attn(#[from] AttnError),
}

/// Deterministic on-the-fly dataset in place of a JSONL file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureToggles {
    /// Capture hidden states for the analysis sample and write per-layer
    /// filler-vector norms.
    pub hidden_states: bool,
    /// Capture attention maps for the analysis sample and write region
    /// statistics plus heatmaps.
    pub attentions: bool,
}

fn default_kinds() -> Vec<FillerKind> {
    FillerKind::ALL.to_vec()
}

fn default_counts() -> Vec<usize> {
    DEFAULT_COUNT_GRID.to_vec()
}

fn default_positions() -> Vec<FillerPosition> {
    vec![FillerPosition::BeforeAnswerCue]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_max_new() -> usize {
    32
}

/// Declarative sweep description, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Weight files. A grid run takes exactly one; a checkpoint sweep takes
    /// two or more.
    pub weights: Vec<PathBuf>,
    /// JSONL dataset path; mutually exclusive with `synthetic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Task kind of the `dataset` file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_kind: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Vocabulary table; the standard one when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    /// Point the pad filler at the eos token before running.
    #[serde(default)]
    pub alias_pad_to_eos: bool,
    /// Prompt template; the standard one when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<FillerKind>,
    /// Filler counts; must include 0 so every family has its baseline.
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "default_positions")]
    pub positions: Vec<FillerPosition>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub capture: CaptureToggles,
    pub output_dir: PathBuf,
    /// Worker pool size; `ECS_WORKERS` overrides, default is the core count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Generation budget for free-form math cells.
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: SweepConfig = toml::from_str(&text).map_err(|e| SweepError::ConfigFile {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let dup = |name: &str| SweepError::Config(format!("duplicate entries in `{name}`"));
        if self.weights.is_empty() {
            return Err(SweepError::Config("no weight files listed".into()));
        }
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(SweepError::Config(
                    "set either `dataset` or `synthetic`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(SweepError::Config(
                    "set a `dataset` path or a `synthetic` block".into(),
                ))
            }
            (Some(_), None) if self.dataset_kind.is_none() => {
                return Err(SweepError::Config(
                    "`dataset` needs `dataset_kind`".into(),
                ))
            }
            _ => {}
        }
        if self.kinds.is_empty() {
            return Err(SweepError::Config("`kinds` is empty".into()));
        }
        if has_duplicates(&self.kinds) {
            return Err(dup("kinds"));
        }
        if self.counts.is_empty() {
            return Err(SweepError::Config("`counts` is empty".into()));
        }
        if has_duplicates(&self.counts) {
            return Err(dup("counts"));
        }
        if !self.counts.contains(&0) {
            return Err(SweepError::Config(
                "`counts` must include 0: the zero-filler cells are the baselines".into(),
            ));
        }
        if self.positions.is_empty() {
            return Err(SweepError::Config("`positions` is empty".into()));
        }
        if has_duplicates(&self.positions) {
            return Err(dup("positions"));
        }
        if self.seeds.is_empty() {
            return Err(SweepError::Config("`seeds` is empty".into()));
        }
        if has_duplicates(&self.seeds) {
            return Err(dup("seeds"));
        }
        if self.max_new_tokens == 0 {
            return Err(SweepError::Config("`max_new_tokens` must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash over every field that influences record contents. Capture
    /// toggles, worker counts, and the output directory are excluded so
    /// changing them does not invalidate a resume.
    pub fn content_hash(&self) -> String {
        let mut s = String::from("v1");
        for w in &self.weights {
            s.push_str(&format!("|w={}", w.display()));
        }
        if let Some(d) = &self.dataset {
            s.push_str(&format!("|d={}", d.display()));
        }
        if let Some(k) = &self.dataset_kind {
            s.push_str(&format!("|dk={k}"));
        }
        if let Some(sy) = &self.synthetic {
            s.push_str(&format!("|syn={}:{}:{}", sy.seed, sy.n, sy.kind));
        }
        if let Some(v) = &self.vocabulary {
            s.push_str(&format!("|v={}", v.display()));
        }
        s.push_str(&format!("|alias={}", self.alias_pad_to_eos));
        if let Some(t) = &self.template {
            s.push_str(&format!("|t={}", t.display()));
        }
        for k in &self.kinds {
            s.push_str(&format!("|k={k}"));
        }
        for c in &self.counts {
            s.push_str(&format!("|m={c}"));
        }
        for p in &self.positions {
            s.push_str(&format!("|p={p}"));
        }
        for seed in &self.seeds {
            s.push_str(&format!("|s={seed}"));
        }
        s.push_str(&format!("|gen={}", self.max_new_tokens));
        fnv1a_hex(s.as_bytes())
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter()
        .enumerate()
        .any(|(i, x)| xs[i + 1..].contains(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    checkpoint: Option<usize>,
    kind: FillerKind,
    count: usize,
    position: FillerPosition,
    seed: u64,
}

impl Cell {
    fn key(&self) -> String {
        let pos = match self.position {
            FillerPosition::BeforeAnswerCue => "before",
            FillerPosition::AfterAnswerCue => "after",
        };
        match self.checkpoint {
            Some(i) => format!("c{i}-{}-m{}-{pos}-s{}", self.kind, self.count, self.seed),
            None => format!("{}-m{}-{pos}-s{}", self.kind, self.count, self.seed),
        }
    }
}

enum SampleSource {
    /// One fixed dataset evaluated under every seed.
    Shared(Vec<TaskSample>),
    /// Synthetic data: each run seed gets its own draw.
    PerSeed(HashMap<u64, Vec<TaskSample>>),
}

impl SampleSource {
    fn for_seed(&self, seed: u64) -> &[TaskSample] {
        match self {
            SampleSource::Shared(samples) => samples,
            SampleSource::PerSeed(map) => map.get(&seed).map_or(&[], Vec::as_slice),
        }
    }
}

struct RunContext<'a> {
    sweep: &'a SweepConfig,
    model_config: &'a ModelConfig,
    weights: &'a WeightSet64,
    vocab: &'a Vocabulary,
    template: &'a PromptTemplate,
    samples: &'a SampleSource,
    task_kind: TaskKind,
    records_dir: PathBuf,
    attn_dir: PathBuf,
    manifest: Mutex<ManifestWriter>,
    hash: String,
    first_seed: u64,
}

impl RunContext<'_> {
    fn records_path(&self, key: &str) -> PathBuf {
        self.records_dir.join(format!("{key}.jsonl"))
    }
}

/// Outcome of one grid run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub cells_total: usize,
    pub cells_completed: usize,
    pub cells_skipped: usize,
    pub cells_failed: usize,
    /// Cells satisfied by the manifest without recomputation.
    pub cells_resumed: usize,
    /// Samples dropped because the widened prompt overflowed the context.
    pub sample_overflows: usize,
    pub records_aggregated: usize,
    pub aggregate_rows: usize,
    /// Absent when every cell overflowed and nothing could be aggregated.
    pub aggregate_path: Option<PathBuf>,
}

/// Outcome of a multi-checkpoint sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointOutcome {
    pub checkpoints: usize,
    pub cells_failed: usize,
    pub rows: usize,
    pub csv_path: PathBuf,
}

/// Runs the full grid for a single weight file and writes the aggregate.
pub fn run_grid(config: &SweepConfig) -> Result<GridOutcome, SweepError> {
    config.validate()?;
    if config.weights.len() != 1 {
        return Err(SweepError::Config(format!(
            "a grid run takes exactly one weight file, got {}; use a checkpoint sweep for several",
            config.weights.len()
        )));
    }
    let (model_config, weights) = WeightSet64::read_from_path(&config.weights[0])?;
    let prepared = prepare(config, &model_config)?;
    let ctx = RunContext {
        sweep: config,
        model_config: &model_config,
        weights: &weights,
        vocab: &prepared.vocab,
        template: &prepared.template,
        samples: &prepared.samples,
        task_kind: prepared.task_kind,
        records_dir: prepared.records_dir.clone(),
        attn_dir: prepared.attn_dir.clone(),
        manifest: Mutex::new(ManifestWriter::open(&prepared.manifest_path).map_err(
            |source| SweepError::Io {
                path: prepared.manifest_path.clone(),
                source,
            },
        )?),
        hash: config.content_hash(),
        first_seed: config.seeds[0],
    };
    let cells = grid_cells(config, None);
    let tally = execute_cells(&ctx, &cells, &prepared.manifest_path)?;

    let records = collect_records(&ctx, &cells, &prepared.manifest_path)?;
    let seeds: BTreeSet<u64> = config.seeds.iter().copied().collect();
    let complete = filter_complete_groups(records, &seeds);
    let (aggregate_path, aggregate_rows, records_aggregated) = if complete.is_empty() {
        log::warn!("no complete configuration groups; skipping aggregation");
        (None, 0, 0)
    } else {
        let rows = aggregate(&complete)?;
        let path = config.output_dir.join("aggregate.csv");
        write_aggregate_csv(&rows, &path)?;
        (Some(path), rows.len(), complete.len())
    };

    Ok(GridOutcome {
        cells_total: cells.len(),
        cells_completed: tally.completed,
        cells_skipped: tally.skipped,
        cells_failed: tally.failed,
        cells_resumed: tally.resumed,
        sample_overflows: tally.sample_overflows,
        records_aggregated,
        aggregate_rows,
        aggregate_path,
    })
}

/// Runs the grid once per checkpoint and writes a single CSV with a leading
/// checkpoint column. Needs at least two checkpoints; every weight file is
/// validated up front so a bad path fails before any cell runs.
pub fn checkpoint_sweep(config: &SweepConfig) -> Result<CheckpointOutcome, SweepError> {
    config.validate()?;
    if config.weights.len() < 2 {
        return Err(SweepError::Config(format!(
            "a checkpoint sweep compares at least two weight files, got {}",
            config.weights.len()
        )));
    }
    let mut loaded = Vec::with_capacity(config.weights.len());
    for path in &config.weights {
        loaded.push(WeightSet64::read_from_path(path)?);
    }
    let mut cells_failed = 0usize;
    let mut combined: Vec<(usize, &PathBuf, Vec<crate::eval::AggregateRow>)> = Vec::new();
    for (i, ((model_config, weights), path)) in loaded.iter().zip(&config.weights).enumerate() {
        let prepared = prepare(config, model_config)?;
        let ctx = RunContext {
            sweep: config,
            model_config,
            weights,
            vocab: &prepared.vocab,
            template: &prepared.template,
            samples: &prepared.samples,
            task_kind: prepared.task_kind,
            records_dir: prepared.records_dir.clone(),
            attn_dir: prepared.attn_dir.clone(),
            manifest: Mutex::new(ManifestWriter::open(&prepared.manifest_path).map_err(
                |source| SweepError::Io {
                    path: prepared.manifest_path.clone(),
                    source,
                },
            )?),
            hash: config.content_hash(),
            first_seed: config.seeds[0],
        };
        let cells = grid_cells(config, Some(i));
        let tally = execute_cells(&ctx, &cells, &prepared.manifest_path)?;
        cells_failed += tally.failed;
        let records = collect_records(&ctx, &cells, &prepared.manifest_path)?;
        let seeds: BTreeSet<u64> = config.seeds.iter().copied().collect();
        let complete = filter_complete_groups(records, &seeds);
        if complete.is_empty() {
            log::warn!("checkpoint {i}: no complete configuration groups");
            combined.push((i, path, Vec::new()));
        } else {
            combined.push((i, path, aggregate(&complete)?));
        }
    }
    let csv_path = config.output_dir.join("checkpoint_aggregate.csv");
    let mut out = String::from("checkpoint,weights,");
    out.push_str(crate::eval::AGGREGATE_CSV_HEADER);
    out.push('\n');
    let mut rows = 0usize;
    for (i, path, agg) in &combined {
        for row in agg {
            out.push_str(&format!(
                "{i},{},{}\n",
                path.display(),
                crate::eval::aggregate_csv_line(row)
            ));
            rows += 1;
        }
    }
    fs::write(&csv_path, out).map_err(|source| SweepError::Io {
        path: csv_path.clone(),
        source,
    })?;
    Ok(CheckpointOutcome {
        checkpoints: config.weights.len(),
        cells_failed,
        rows,
        csv_path,
    })
}

struct Prepared {
    vocab: Vocabulary,
    template: PromptTemplate,
    samples: SampleSource,
    task_kind: TaskKind,
    records_dir: PathBuf,
    attn_dir: PathBuf,
    manifest_path: PathBuf,
}

fn prepare(config: &SweepConfig, model_config: &ModelConfig) -> Result<Prepared, SweepError> {
    let mut vocab = match &config.vocabulary {
        Some(path) => Vocabulary::load(path)?,
        None => Vocabulary::standard(),
    };
    if config.alias_pad_to_eos {
        vocab.set_filler_alias(FillerKind::Pad, vocab.eos_id())?;
    }
    if vocab.len() > model_config.vocab_size() {
        return Err(SweepError::Config(format!(
            "vocabulary has {} entries but the model embeds only {}",
            vocab.len(),
            model_config.vocab_size()
        )));
    }
    let template = match &config.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::standard(),
    };
    let (samples, task_kind) = match (&config.dataset, &config.synthetic) {
        (Some(path), None) => {
            let kind = config
                .dataset_kind
                .expect("validated config has a dataset kind");
            let outcome = load_samples(path, kind)?;
            for issue in &outcome.issues {
                log::warn!(
                    "{}:{} rejected record ({:?}): {}",
                    path.display(),
                    issue.line,
                    issue.kind,
                    issue.message
                );
            }
            if outcome.samples.is_empty() {
                return Err(SweepError::Config(format!(
                    "dataset {} has no valid samples",
                    path.display()
                )));
            }
            (SampleSource::Shared(outcome.samples), kind)
        }
        (None, Some(spec)) => {
            let map = config
                .seeds
                .iter()
                .map(|&seed| {
                    (
                        seed,
                        generate_synthetic(spec.seed.wrapping_add(seed), spec.n, spec.kind),
                    )
                })
                .collect();
            (SampleSource::PerSeed(map), spec.kind)
        }
        _ => unreachable!("validated config has exactly one sample source"),
    };
    let records_dir = config.output_dir.join("records");
    let attn_dir = config.output_dir.join("attn");
    for dir in [&config.output_dir, &records_dir, &attn_dir] {
        fs::create_dir_all(dir).map_err(|source| SweepError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    Ok(Prepared {
        vocab,
        template,
        samples,
        task_kind,
        records_dir,
        attn_dir,
        manifest_path: config.output_dir.join("manifest.jsonl"),
    })
}

fn grid_cells(config: &SweepConfig, checkpoint: Option<usize>) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &kind in &config.kinds {
        for &count in &config.counts {
            for &position in &config.positions {
                for &seed in &config.seeds {
                    cells.push(Cell {
                        checkpoint,
                        kind,
                        count,
                        position,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Default)]
struct Tally {
    completed: usize,
    skipped: usize,
    failed: usize,
    resumed: usize,
    sample_overflows: usize,
}

fn resolve_workers(config: &SweepConfig) -> usize {
    if let Ok(value) = std::env::var(WORKERS_ENV) {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => return n,
            _ => log::warn!("ignoring invalid {WORKERS_ENV}={value}"),
        }
    }
    config.workers.unwrap_or(0) // 0 lets rayon pick the core count
}

fn execute_cells(
    ctx: &RunContext<'_>,
    cells: &[Cell],
    manifest_path: &Path,
) -> Result<Tally, SweepError> {
    let existing = read_manifest(manifest_path, &ctx.hash);
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|cell| {
            let key = cell.key();
            match existing.get(&key) {
                Some(entry) => match entry.status {
                    CellStatus::Skipped => false,
                    CellStatus::Completed => !ctx.records_path(&key).exists(),
                    CellStatus::Failed => true,
                },
                None => true,
            }
        })
        .collect();
    let mut tally = Tally {
        resumed: cells.len() - pending.len(),
        ..Tally::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(ctx.sweep))
        .build()
        .map_err(|e| SweepError::Config(format!("worker pool: {e}")))?;
    let results: Vec<(CellStatus, usize)> = pool.install(|| {
        pending
            .par_iter()
            .map(|cell| run_one_cell(ctx, cell))
            .collect()
    });
    for (status, overflows) in results {
        tally.sample_overflows += overflows;
        match status {
            CellStatus::Completed => tally.completed += 1,
            CellStatus::Skipped => tally.skipped += 1,
            CellStatus::Failed => tally.failed += 1,
        }
    }
    Ok(tally)
}

/// Runs one cell end to end. Per-sample context overflows are counted and
/// logged; any other error fails the whole cell. The manifest line is
/// appended before returning.
fn run_one_cell(ctx: &RunContext<'_>, cell: &Cell) -> (CellStatus, usize) {
    let key = cell.key();
    let (status, records, overflows) = match evaluate_cell(ctx, cell) {
        Ok((records, overflows, analysis_prompt)) => {
            if records.is_empty() {
                log::info!("cell {key}: every sample overflowed, marking skipped");
                (CellStatus::Skipped, 0, overflows)
            } else {
                match write_records_jsonl(&ctx.records_path(&key), &records) {
                    Ok(()) => {
                        let analysis = analysis_prompt
                            .map(|p| analyze_cell(ctx, cell, &key, &p))
                            .unwrap_or(Ok(()));
                        match analysis {
                            Ok(()) => (CellStatus::Completed, records.len(), overflows),
                            Err(e) => {
                                log::error!("cell {key}: analysis failed: {e}");
                                (CellStatus::Failed, 0, overflows)
                            }
                        }
                    }
                    Err(e) => {
                        log::error!("cell {key}: writing records failed: {e}");
                        (CellStatus::Failed, 0, overflows)
                    }
                }
            }
        }
        Err(e) => {
            log::error!("cell {key}: {e}");
            (CellStatus::Failed, 0, 0)
        }
    };
    let entry = ManifestEntry {
        key,
        config_hash: ctx.hash.clone(),
        status,
        records,
    };
    let mut writer = ctx.manifest.lock().expect("manifest lock");
    if let Err(e) = writer.append(&entry) {
        log::error!("manifest append failed: {e}");
        return (CellStatus::Failed, overflows);
    }
    (status, overflows)
}

type CellEvaluation = (Vec<RunRecord>, usize, Option<PromptTokens>);

fn evaluate_cell(ctx: &RunContext<'_>, cell: &Cell) -> Result<CellEvaluation, SweepError> {
    let spec = FillerSpec {
        kind: cell.kind,
        count: cell.count,
        position: cell.position,
    };
    let max_context = ctx.model_config.max_context();
    let stop_ids = [ctx.vocab.eos_id(), ctx.vocab.eot_id()];
    let mut records = Vec::new();
    let mut overflows = 0usize;
    let mut analysis_prompt: Option<PromptTokens> = None;
    let wants_analysis = (ctx.sweep.capture.attentions || ctx.sweep.capture.hidden_states)
        && cell.count > 0
        && cell.seed == ctx.first_seed;
    for sample in ctx.samples.for_seed(cell.seed) {
        let prompt = match assemble(sample, &spec, ctx.template, ctx.vocab, max_context) {
            Ok(p) => p,
            Err(PromptError::ContextOverflow { length, .. }) => {
                log::debug!(
                    "cell {}: sample {} overflows ({length} > {max_context})",
                    cell.key(),
                    sample.id
                );
                overflows += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (predicted, correct, probabilities) = match ctx.task_kind {
            TaskKind::MultipleChoice => {
                let result = forward(
                    &prompt.tokens,
                    ctx.model_config,
                    ctx.weights,
                    CaptureOptions::none(),
                )?;
                let options = sample
                    .options
                    .iter()
                    .map(|o| {
                        ctx.vocab.option_id(o.label).map(|id| (o.label, id)).ok_or_else(|| {
                            SweepError::Config(format!(
                                "vocabulary has no token for option letter `{}`",
                                o.label
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let score = score_multiple_choice(&result.logits, &options)?;
                let predicted = score.predicted.to_string();
                let correct = predicted == sample.gold;
                (Some(predicted), correct, Some(score.probabilities))
            }
            TaskKind::FreeFormMath => {
                if prompt.tokens.len() + ctx.sweep.max_new_tokens > max_context {
                    overflows += 1;
                    continue;
                }
                let generated = greedy_decode(
                    &prompt.tokens,
                    ctx.sweep.max_new_tokens,
                    &stop_ids,
                    ctx.model_config,
                    ctx.weights,
                )?;
                let text = ctx.vocab.decode_lossy(&generated);
                let predicted = extract_math_answer(&text);
                let correct = predicted.as_deref() == Some(sample.gold.as_str());
                (predicted, correct, None)
            }
        };
        if wants_analysis && analysis_prompt.is_none() {
            analysis_prompt = Some(prompt.clone());
        }
        records.push(RunRecord {
            sample_id: sample.id.clone(),
            task_kind: ctx.task_kind,
            filler_kind: cell.kind,
            filler_count: cell.count,
            position: cell.position,
            seed: cell.seed,
            predicted,
            gold: sample.gold.clone(),
            correct,
            probabilities,
        });
    }
    Ok((records, overflows, analysis_prompt))
}

/// Captured-pass analysis for one cell: region statistics, heatmaps (small
/// maps only), and filler-vector norms, each under `attn/<cell>/`.
fn analyze_cell(
    ctx: &RunContext<'_>,
    cell: &Cell,
    key: &str,
    prompt: &PromptTokens,
) -> Result<(), SweepError> {
    let capture = CaptureOptions {
        hidden_states: ctx.sweep.capture.hidden_states,
        attentions: ctx.sweep.capture.attentions,
    };
    let result = forward(&prompt.tokens, ctx.model_config, ctx.weights, capture)?;
    let cell_dir = ctx.attn_dir.join(key);
    fs::create_dir_all(&cell_dir).map_err(|source| SweepError::Io {
        path: cell_dir.clone(),
        source,
    })?;
    if let Some(attentions) = &result.attentions {
        let stats = region_stats(attentions, prompt, ctx.vocab.eot_id())?;
        write_region_stats_csv(&stats, &cell_dir.join("stats.csv"))?;
        if prompt.tokens.len() <= RENDER_SIDE_LIMIT {
            for (layer, heads) in attentions.iter().enumerate() {
                for (head, map) in heads.iter().enumerate() {
                    let name = format!("attn_L{layer}_H{head}.svg");
                    render_heatmap(
                        map,
                        prompt,
                        layer,
                        HeadSel::Head(head),
                        &cell_dir.join(name),
                    )?;
                }
            }
        } else {
            log::info!(
                "cell {}: map side {} exceeds render limit, statistics only",
                cell.key(),
                prompt.tokens.len()
            );
        }
    }
    if result.hidden_states.is_some() {
        let ecs = extract_ecs(&result, prompt)?;
        let mut out = String::from("layer,mean_l2_norm\n");
        for (layer, m) in ecs.layers.iter().enumerate() {
            let mut total = 0.0f64;
            for r in 0..m.rows() {
                let norm: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                total += norm;
            }
            let mean = if m.rows() == 0 { 0.0 } else { total / m.rows() as f64 };
            out.push_str(&format!("{layer},{mean:.6}\n"));
        }
        let path = cell_dir.join("ecs_norms.csv");
        fs::write(&path, out).map_err(|source| SweepError::Io { path, source })?;
    }
    Ok(())
}

fn collect_records(
    ctx: &RunContext<'_>,
    cells: &[Cell],
    manifest_path: &Path,
) -> Result<Vec<RunRecord>, SweepError> {
    let manifest = read_manifest(manifest_path, &ctx.hash);
    let mut records = Vec::new();
    for cell in cells {
        let key = cell.key();
        if let Some(entry) = manifest.get(&key) {
            if entry.status == CellStatus::Completed {
                records.extend(read_records_jsonl(&ctx.records_path(&key))?);
            }
        }
    }
    Ok(records)
}

/// Drops configuration groups that are missing any seed (for example when a
/// cell failed), so aggregation sees a rectangular seed grid.
fn filter_complete_groups(records: Vec<RunRecord>, seeds: &BTreeSet<u64>) -> Vec<RunRecord> {
    let mut group_seeds: BTreeMap<(TaskKind, FillerKind, usize, FillerPosition), BTreeSet<u64>> =
        BTreeMap::new();
    for r in &records {
        group_seeds
            .entry((r.task_kind, r.filler_kind, r.filler_count, r.position))
            .or_default()
            .insert(r.seed);
    }
    let incomplete: Vec<_> = group_seeds
        .iter()
        .filter(|(_, have)| *have != seeds)
        .map(|(key, _)| *key)
        .collect();
    for key in &incomplete {
        log::warn!("dropping configuration {key:?}: incomplete seed set");
    }
    records
        .into_iter()
        .filter(|r| {
            !incomplete.contains(&(r.task_kind, r.filler_kind, r.filler_count, r.position))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(dir: &Path) -> SweepConfig {
        SweepConfig {
            weights: vec![dir.join("model.ecsw")],
            dataset: None,
            dataset_kind: None,
            synthetic: Some(SyntheticSpec {
                seed: 0,
                n: 4,
                kind: TaskKind::MultipleChoice,
            }),
            vocabulary: None,
            alias_pad_to_eos: false,
            template: None,
            kinds: vec![FillerKind::Space],
            counts: vec![0, 16],
            positions: vec![FillerPosition::BeforeAnswerCue],
            seeds: vec![0],
            capture: CaptureToggles::default(),
            output_dir: dir.join("out"),
            workers: Some(1),
            max_new_tokens: 8,
        }
    }

    #[test]
    fn validation_catches_config_mistakes() {
        let dir = tempfile::tempdir().unwrap();
        let ok = minimal_config(dir.path());
        ok.validate().unwrap();

        let mut no_zero = ok.clone();
        no_zero.counts = vec![16, 64];
        assert!(matches!(no_zero.validate(), Err(SweepError::Config(_))));

        let mut both_sources = ok.clone();
        both_sources.dataset = Some(dir.path().join("d.jsonl"));
        assert!(both_sources.validate().is_err());

        let mut no_source = ok.clone();
        no_source.synthetic = None;
        assert!(no_source.validate().is_err());

        let mut dataset_without_kind = ok.clone();
        dataset_without_kind.synthetic = None;
        dataset_without_kind.dataset = Some(dir.path().join("d.jsonl"));
        assert!(dataset_without_kind.validate().is_err());

        let mut no_seeds = ok.clone();
        no_seeds.seeds = vec![];
        assert!(no_seeds.validate().is_err());

        let mut dup_counts = ok.clone();
        dup_counts.counts = vec![0, 16, 16];
        assert!(dup_counts.validate().is_err());

        let mut no_weights = ok;
        no_weights.weights = vec![];
        assert!(no_weights.validate().is_err());
    }

    #[test]
    fn content_hash_tracks_science_fields_only() {
        let dir = tempfile::tempdir().unwrap();
        let base = minimal_config(dir.path());
        let mut same = base.clone();
        same.workers = Some(7);
        same.capture.attentions = true;
        same.output_dir = dir.path().join("elsewhere");
        assert_eq!(base.content_hash(), same.content_hash());

        let mut counts = base.clone();
        counts.counts = vec![0, 32];
        assert_ne!(base.content_hash(), counts.content_hash());

        let mut alias = base.clone();
        alias.alias_pad_to_eos = true;
        assert_ne!(base.content_hash(), alias.content_hash());

        let mut gen = base.clone();
        gen.max_new_tokens = 9;
        assert_ne!(base.content_hash(), gen.content_hash());
    }

    #[test]
    fn cell_keys_are_filesystem_safe_and_unique() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = minimal_config(dir.path());
        config.kinds = FillerKind::ALL.to_vec();
        config.counts = vec![0, 16, 8192];
        config.positions = FillerPosition::ALL.to_vec();
        config.seeds = vec![0, 1];
        let cells = grid_cells(&config, Some(3));
        assert_eq!(cells.len(), 6 * 3 * 2 * 2);
        let keys: BTreeSet<String> = cells.iter().map(Cell::key).collect();
        assert_eq!(keys.len(), cells.len());
        for key in &keys {
            assert!(key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-'));
            assert!(key.starts_with("c3-"));
        }
    }

    #[test]
    fn toml_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
weights = ["model.ecsw"]
output_dir = "out"
kinds = ["space", "pad"]
counts = [0, 64]
seeds = [0, 1, 2]
alias_pad_to_eos = true

[synthetic]
seed = 7
n = 50
kind = "multiple_choice"

[capture]
attentions = true
"#;
        let path = dir.path().join("sweep.toml");
        fs::write(&path, text).unwrap();
        let config = SweepConfig::load(&path).unwrap();
        assert_eq!(config.kinds, vec![FillerKind::Space, FillerKind::Pad]);
        assert_eq!(config.counts, vec![0, 64]);
        assert!(config.alias_pad_to_eos);
        assert!(config.capture.attentions);
        assert!(!config.capture.hidden_states);
        assert_eq!(config.positions, vec![FillerPosition::BeforeAnswerCue]);
        assert_eq!(config.max_new_tokens, 32);
        let syn = config.synthetic.unwrap();
        assert_eq!((syn.seed, syn.n, syn.kind), (7, 50, TaskKind::MultipleChoice));

        // Defaults: full kind list and count grid.
        let bare = r#"
weights = ["model.ecsw"]
output_dir = "out"

[synthetic]
seed = 0
n = 10
kind = "free_form_math"
"#;
        fs::write(&path, bare).unwrap();
        let config = SweepConfig::load(&path).unwrap();
        assert_eq!(config.kinds.len(), 6);
        assert_eq!(config.counts, DEFAULT_COUNT_GRID.to_vec());
        assert_eq!(config.seeds, vec![0, 1, 2]);

        fs::write(&path, "weights = []").unwrap();
        assert!(SweepConfig::load(&path).is_err());
        assert!(matches!(
            SweepConfig::load(&dir.path().join("missing.toml")),
            Err(SweepError::Io { .. })
        ));
    }

    #[test]
    fn group_filter_drops_partial_seed_sets() {
        let seeds: BTreeSet<u64> = [0, 1].into_iter().collect();
        let rec = |count: usize, seed: u64| RunRecord {
            sample_id: "s".into(),
            task_kind: TaskKind::MultipleChoice,
            filler_kind: FillerKind::Space,
            filler_count: count,
            position: FillerPosition::BeforeAnswerCue,
            seed,
            predicted: None,
            gold: "A".into(),
            correct: false,
            probabilities: None,
        };
        let records = vec![rec(0, 0), rec(0, 1), rec(16, 0)];
        let kept = filter_complete_groups(records, &seeds);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|r| r.filler_count == 0));
    }
}
