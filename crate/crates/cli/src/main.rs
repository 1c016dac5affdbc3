//! `grpolab` command-line interface.
//!
//! Exit status: 0 on success, 1 when a command fails while running, 2 for
//! usage errors (bad flags, missing or invalid inputs detected before any
//! computation starts).

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use grpolab::config::{ENV_CONFIG, ENV_DATASET, ENV_OUT_DIR};
use grpolab::data::write_dataset;
use grpolab::embedding::{EmbeddingProvider, RemoteEmbeddings, SyntheticEmbeddings};
use grpolab::gradcheck::{run_gradcheck, DEFAULT_CASES, GRADCHECK_TOLERANCE};
use grpolab::proxy::{compute_keyframe_truth, write_cache};
use grpolab::score::{score_batch, write_results};
use grpolab::{
    evaluate, generate_synthetic_tasks, load_dataset, train, Checkpoint, EvalMode, EvalOptions, KeyframeMode,
    PromptTemplate, RunConfig, ScorerKind, SynthSpec, TaskMix, Variant,
};

#[derive(Parser)]
#[command(name = "grpolab", version, about = "Train and evaluate a toy policy with GRPO and rule-based rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes metrics.jsonl, metrics.csv, checkpoint.bin and config.toml.
    Train(TrainArgs),
    /// Greedy exact-match evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Score recorded completions (JSON lines) with the rule-based rewards.
    Score(ScoreArgs),
    /// Compute proxy ground-truth keyframes and write them to a cache file.
    Keyframes(KeyframesArgs),
    /// Check the analytic objective gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration. Keys not given fall back to defaults.
    #[arg(long, env = ENV_CONFIG)]
    config: Option<PathBuf>,
    /// Dataset (JSON lines); overrides the config and GRPOLAB_DATASET.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory; overrides the config and GRPOLAB_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run seed; overrides the config and GRPOLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Objective variant: grpo or dr_grpo.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset of mcqa/yesno records.
    #[arg(long)]
    dataset: PathBuf,
    /// reasoning (think, then answer) or direct (answer only).
    #[arg(long, default_value = "reasoning")]
    mode: EvalMode,
    /// Template rendered in reasoning mode.
    #[arg(long, default_value = "detailed")]
    template: PromptTemplate,
    /// Maximum decoded tokens per question.
    #[arg(long, default_value_t = 24)]
    max_len: usize,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Input completions, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KeyframesArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Selection rule: top_k:K, top_p:P or bottom_p:P.
    #[arg(long)]
    mode: KeyframeMode,
    /// Importance scorer: probability (uses frame_scores) or cosine (uses embeddings).
    #[arg(long, default_value = "probability")]
    scorer: ScorerKind,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
    /// Remote embedding service for the cosine scorer; synthetic embeddings if omitted.
    #[arg(long)]
    embed_url: Option<String>,
    /// Embedding dimension.
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    /// Request timeout for the embedding service, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    embed_timeout_ms: u64,
    /// Seed of the synthetic embeddings.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random configurations.
    #[arg(long, default_value_t = DEFAULT_CASES)]
    cases: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    questions: usize,
    /// Number of prompt classes (distinct underlying questions).
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Choices per multiple-choice question.
    #[arg(long, default_value_t = 4)]
    choices: usize,
    /// Frames per video; 0 writes records without frame data.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Relative weight of yes/no classes (multiple choice has weight 1).
    #[arg(long, default_value_t = 0.0)]
    yesno: f64,
    /// Relative weight of open-ended classes.
    #[arg(long, default_value_t = 0.0)]
    open: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path, "config file")?;
            RunConfig::load(path).map_err(usage)?
        }
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env(|k| std::env::var(k).ok()).map_err(usage)?;
            cfg
        }
    };
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &args.out_dir {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        cfg.training_steps = n;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    match &cfg.dataset {
        None => {
            return Err(usage(format!(
                "no dataset given (use --dataset, the config file, or {ENV_DATASET})"
            )))
        }
        Some(d) => require_file(d, "dataset")?,
    }
    if let Some(cache) = &cfg.keyframe_cache {
        require_file(cache, "keyframe cache")?;
    }
    if cfg.out_dir.is_none() {
        return Err(usage(format!(
            "no output directory given (use --out-dir, the config file, or {ENV_OUT_DIR})"
        )));
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let cfg = resolve_train_config(&args)?;
    let dataset = cfg.dataset.clone().expect("checked");
    let out_dir = cfg.out_dir.clone().expect("checked");
    let records = load_dataset(&dataset).map_err(usage)?;
    let outcome = train(&cfg, &records, &out_dir).map_err(runtime)?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "step {}: accuracy {:.3} format {:.3} length {:.2} kl {:.4}",
            last.step, last.mean_accuracy_reward, last.mean_format_reward, last.mean_completion_length, last.kl_penalty
        );
    }
    println!("metrics: {}", outcome.metrics_path.display());
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.dataset, "dataset")?;
    let records = load_dataset(&args.dataset).map_err(usage)?;
    let checkpoint = Checkpoint::load(&args.checkpoint).map_err(runtime)?;
    let dataset_id = args
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let opts = EvalOptions {
        mode: args.mode,
        template: args.template,
        max_len: args.max_len,
    };
    let report = evaluate(&checkpoint, &records, &dataset_id, &opts).map_err(runtime)?;
    let json = serde_json::to_string(&report).map_err(runtime)?;
    println!("{json}");
    if let Some(out) = args.out {
        fs::write(out, format!("{json}\n")).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> CliResult {
    require_file(&args.input, "input")?;
    let file = File::open(&args.input).map_err(usage)?;
    let results = score_batch(BufReader::new(file), &args.input).map_err(runtime)?;
    match args.out {
        Some(path) => {
            let file = File::create(path).map_err(runtime)?;
            write_results(BufWriter::new(file), &results).map_err(runtime)
        }
        None => write_results(io::stdout().lock(), &results).map_err(runtime),
    }
}

fn cmd_keyframes(args: KeyframesArgs) -> CliResult {
    require_file(&args.dataset, "dataset")?;
    let records = load_dataset(&args.dataset).map_err(usage)?;
    let provider: Option<Box<dyn EmbeddingProvider>> = match (args.scorer, &args.embed_url) {
        (ScorerKind::Probability, _) => None,
        (ScorerKind::Cosine, Some(url)) => Some(Box::new(RemoteEmbeddings::new(
            url.clone(),
            args.embed_dim,
            Duration::from_millis(args.embed_timeout_ms),
            2,
        ))),
        (ScorerKind::Cosine, None) => Some(Box::new(
            SyntheticEmbeddings::from_records(&records, args.embed_dim, args.seed).map_err(usage)?,
        )),
    };
    let entries = compute_keyframe_truth(&records, args.mode, args.scorer, provider.as_deref()).map_err(runtime)?;
    write_cache(&args.out, &entries).map_err(runtime)?;
    println!("{} entries written to {}", entries.len(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    if args.cases == 0 {
        return Err(usage("--cases must be positive"));
    }
    let report = run_gradcheck(args.seed, args.cases).map_err(runtime)?;
    println!(
        "max relative error {:.3e} over {} cases ({} with clipping active); tolerance {GRADCHECK_TOLERANCE:e}",
        report.max_relative_error, report.cases, report.clip_active_cases
    );
    if report.passed() {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed (worst case {})", report.worst_case)))
    }
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        n_classes: args.classes,
        n_questions: args.questions,
        n_choices: args.choices,
        mix: TaskMix {
            mcqa: 1.0,
            yesno: args.yesno,
            open: args.open,
        },
        n_frames: (args.frames > 0).then_some(args.frames),
        salient_frames: 1,
    };
    let records = generate_synthetic_tasks(&spec, args.seed).map_err(usage)?;
    write_dataset(&args.out, &records).map_err(runtime)?;
    println!("{} records written to {}", records.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
        Command::Keyframes(a) => cmd_keyframes(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(io::stderr(), "error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(io::stderr(), "error: {m}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
