//! Command-line front end for the filler-token experiment engine.
//!
//! Exit codes: 0 on success, 1 when the work finished but something was
//! rejected (failed grid cells, malformed dataset records), 2 on hard errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ecs_core::datasets::{generate_synthetic, load_samples, IssueKind, TaskKind};
use ecs_core::model::{
    count_masked_scores, total_scores, ModelConfig, NormPlacement, PositionalScheme,
};
use ecs_core::prompt::{assemble, FillerPosition, FillerSpec, PromptTemplate};
use ecs_core::sweep::{checkpoint_sweep, emit_plots, run_grid, SweepConfig};
use ecs_core::tokenizer::{FillerKind, Vocabulary};
use ecs_core::WeightSet64;

#[derive(Parser)]
#[command(
    name = "ecs",
    version,
    about = "Experiments on filler tokens as expanded computation space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a sweep config.
    Run(ConfigArgs),
    /// Run the grid for every listed checkpoint and combine the aggregates.
    SweepCheckpoints(ConfigArgs),
    /// Render SVG charts from an aggregate CSV.
    Plot(PlotArgs),
    /// Write a seeded random weight file.
    GenWeights(GenWeightsArgs),
    /// Check a dataset file and list rejected records.
    Validate(ValidateArgs),
    /// Assemble a single prompt and print it with its filler geometry.
    DumpPrompt(DumpPromptArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Sweep config TOML.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// An aggregate.csv or checkpoint_aggregate.csv file.
    #[arg(long)]
    csv: PathBuf,
    /// Directory the SVG files go to.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenWeightsArgs {
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1024)]
    max_context: usize,
    /// Residual stream layout: pre or post.
    #[arg(long, default_value = "pre")]
    norm: NormPlacement,
    /// Position handling: rotary, learned-absolute, or none.
    #[arg(long, default_value = "rotary")]
    positional: PositionalScheme,
}

#[derive(Args)]
struct ValidateArgs {
    /// JSONL dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// multiple_choice or free_form_math.
    #[arg(long)]
    task: TaskKind,
}

#[derive(Args)]
struct DumpPromptArgs {
    /// Read the sample from this dataset instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// multiple_choice or free_form_math.
    #[arg(long, default_value = "multiple_choice")]
    task: TaskKind,
    /// Sample index within the dataset or the synthetic stream.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Seed for the synthetic stream when no dataset is given.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
    /// Filler kind: space, enter, tab, period, pad, or dash.
    #[arg(long, default_value = "space")]
    filler: FillerKind,
    /// How many filler tokens to insert.
    #[arg(long, default_value_t = 0)]
    count: usize,
    /// before_answer_cue or after_answer_cue.
    #[arg(long, default_value = "before_answer_cue")]
    position: FillerPosition,
    /// Prompt template TOML; the standard template when omitted.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Vocabulary table; the standard one when omitted.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Point the pad filler at the eos token.
    #[arg(long)]
    alias_pad_to_eos: bool,
    #[arg(long, default_value_t = 1024)]
    max_context: usize,
}

fn main() -> ExitCode {
    // Die quietly when the reader of a pipe goes away (e.g. `ecs ... | head`);
    // Rust's default turns that into a panic on the next print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(&args),
        Command::SweepCheckpoints(args) => cmd_sweep_checkpoints(&args),
        Command::Plot(args) => cmd_plot(&args),
        Command::GenWeights(args) => cmd_gen_weights(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::DumpPrompt(args) => cmd_dump_prompt(&args),
    }
}

fn cmd_run(args: &ConfigArgs) -> Result<ExitCode> {
    let config = SweepConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let outcome = run_grid(&config)?;
    println!(
        "cells: {} total | {} completed | {} resumed | {} skipped | {} failed",
        outcome.cells_total,
        outcome.cells_completed,
        outcome.cells_resumed,
        outcome.cells_skipped,
        outcome.cells_failed
    );
    if outcome.sample_overflows > 0 {
        println!(
            "samples dropped for context overflow: {}",
            outcome.sample_overflows
        );
    }
    match &outcome.aggregate_path {
        Some(path) => println!(
            "aggregate: {} rows over {} records -> {}",
            outcome.aggregate_rows,
            outcome.records_aggregated,
            path.display()
        ),
        None => println!("no aggregate written (no complete configuration groups)"),
    }
    Ok(exit_for_failures(outcome.cells_failed))
}

fn cmd_sweep_checkpoints(args: &ConfigArgs) -> Result<ExitCode> {
    let config = SweepConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let outcome = checkpoint_sweep(&config)?;
    println!(
        "checkpoints: {} | failed cells: {} | combined rows: {} -> {}",
        outcome.checkpoints,
        outcome.cells_failed,
        outcome.rows,
        outcome.csv_path.display()
    );
    Ok(exit_for_failures(outcome.cells_failed))
}

fn cmd_plot(args: &PlotArgs) -> Result<ExitCode> {
    let files = emit_plots(&args.csv, &args.out)?;
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_weights(args: &GenWeightsArgs) -> Result<ExitCode> {
    let config = ModelConfig::new(
        args.layers,
        args.hidden_dim,
        args.heads,
        args.vocab_size,
        args.max_context,
        args.norm,
        args.positional,
    )?;
    let weights = WeightSet64::seeded_uniform(&config, args.seed);
    weights.write_to_path(&config, &args.out)?;
    let bytes = std::fs::metadata(&args.out)
        .with_context(|| format!("checking {}", args.out.display()))?
        .len();
    println!(
        "wrote {} ({} layers, dim {}, {} heads, vocab {}, ctx {}, {} norm, {} positions, seed {}), {} bytes",
        args.out.display(),
        args.layers,
        args.hidden_dim,
        args.heads,
        args.vocab_size,
        args.max_context,
        args.norm,
        args.positional,
        args.seed,
        bytes
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode> {
    let outcome = load_samples(&args.dataset, args.task)?;
    for issue in &outcome.issues {
        let kind = match issue.kind {
            IssueKind::Parse => "parse",
            IssueKind::Schema => "schema",
        };
        println!(
            "{}:{}: {kind}: {}",
            args.dataset.display(),
            issue.line,
            issue.message
        );
    }
    println!(
        "{} valid samples, {} rejected records",
        outcome.samples.len(),
        outcome.issues.len()
    );
    Ok(exit_for_failures(outcome.issues.len()))
}

fn cmd_dump_prompt(args: &DumpPromptArgs) -> Result<ExitCode> {
    let mut vocab = match &args.vocabulary {
        Some(path) => Vocabulary::load(path)?,
        None => Vocabulary::standard(),
    };
    if args.alias_pad_to_eos {
        vocab.set_filler_alias(FillerKind::Pad, vocab.eos_id())?;
    }
    let template = match &args.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::standard(),
    };
    let sample = match &args.dataset {
        Some(path) => {
            let outcome = load_samples(path, args.task)?;
            outcome
                .samples
                .into_iter()
                .nth(args.index)
                .with_context(|| format!("dataset has no sample at index {}", args.index))?
        }
        None => {
            let mut samples = generate_synthetic(args.synthetic_seed, args.index + 1, args.task);
            samples.pop().expect("requested a nonempty synthetic batch")
        }
    };
    let spec = FillerSpec {
        kind: args.filler,
        count: args.count,
        position: args.position,
    };
    let prompt = assemble(&sample, &spec, &template, &vocab, args.max_context)?;

    println!("sample: {} (gold {})", sample.id, sample.gold);
    println!("--- prompt ---");
    println!("{}", vocab.decode(&prompt.tokens)?);
    println!("--- geometry ---");
    println!(
        "tokens: {} ({} base + {} filler)",
        prompt.tokens.len(),
        prompt.base_len,
        prompt.filler_count()
    );
    println!(
        "filler range: {}..{}",
        prompt.ecs_range.start, prompt.ecs_range.end
    );
    println!("answer cue index: {}", prompt.answer_cue_index);
    if let Some(r) = &prompt.spans.context {
        println!("context span: {}..{}", r.start, r.end);
    }
    println!(
        "question span: {}..{}",
        prompt.spans.question.start, prompt.spans.question.end
    );
    for (label, r) in &prompt.spans.options {
        println!("option {label} span: {}..{}", r.start, r.end);
    }
    if let Some(r) = &prompt.spans.rationale {
        println!("rationale span: {}..{}", r.start, r.end);
    }
    println!(
        "causal mask hides {} of {} attention scores",
        count_masked_scores(prompt.base_len, prompt.filler_count()),
        total_scores(prompt.base_len, prompt.filler_count())
    );
    Ok(ExitCode::SUCCESS)
}

fn exit_for_failures(failures: usize) -> ExitCode {
    if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
