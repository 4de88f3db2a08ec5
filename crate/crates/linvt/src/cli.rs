//! Command-line surface. Every command is deterministic given `--seed`
//! (or the `LINVT_SEED` environment variable), writes files atomically,
//! and exits with a fixed code per failure class:
//!
//! | code | meaning                          |
//! |------|----------------------------------|
//! | 0    | success                          |
//! | 1    | selftest found a failing property |
//! | 2    | input parse error                |
//! | 3    | shape or config mismatch         |
//! | 4    | I/O error                        |
//! | 5    | training diverged                |
//! | 64   | usage error                      |

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::Error;
use crate::format::{lvt, write_atomic};
use crate::model::{Config, Model, Variant};
use crate::segment;
use crate::selftest::{run_all, Budget};
use crate::svr::{self, FrameTokenStream};
use crate::tensor::Tape;
use crate::train::{eval_retrieval, text_swap_rates, train_loop, TaskSpec, TrainSettings};
use crate::tta::{embed_text, TextTokens};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "linvt",
    version,
    about = "Condense per-frame visual token streams into a small fixed set of video tokens"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the tokenizer over an LVT1 stream and write the output tokens.
    Tokenize(TokenizeArgs),
    /// Dump significance scores and top-k selection masks as JSON lines.
    Inspect(InspectArgs),
    /// Run the invariant suite and print a pass/fail table.
    Selftest,
    /// Train on the synthetic needle-retrieval task.
    Train(TrainArgs),
    /// Train and evaluate every variant on the toy task.
    Eval(EvalArgs),
    /// Measure forward latency and compression.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    /// Input LVT1 stream.
    #[arg(long)]
    input: PathBuf,
    /// LVTW weights; freshly initialized from the seed when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Config: `desk`, `reference`, or a path to a JSON config.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Instruction text conditioning the aggregation.
    #[arg(long)]
    text: Option<String>,
    /// Output LVT1 file.
    #[arg(long)]
    output: PathBuf,
    /// Split the stream at shot boundaries and tokenize each clip.
    #[arg(long)]
    segment: bool,
    /// Cosine-distance threshold for the boundary stub.
    #[arg(long, default_value_t = segment::DEFAULT_THRESHOLD)]
    segment_threshold: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    config: String,
    /// Selection size; defaults to the config's k.
    #[arg(long)]
    top: Option<usize>,
    /// Output JSON-lines mask dump.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the trained weights.
    #[arg(long)]
    out_weights: Option<PathBuf>,
    /// Where to write the JSON-lines metric log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Task geometry: frames per task.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Task geometry: tokens per frame.
    #[arg(long, default_value_t = 16)]
    frame_tokens: usize,
    /// Task geometry: number of needle classes.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the per-variant rows to this JSON-lines file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    frame_tokens: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Held-out tasks per evaluation.
    #[arg(long, default_value_t = 64)]
    eval_tasks: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Entry point used by the `linvt` binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Tokenize(args) => cmd_tokenize(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Selftest => return cmd_selftest(),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("linvt: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::CorruptFile(_) | Error::VersionMismatch { .. } | Error::NumericInput { .. } => {
            EXIT_PARSE
        }
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

/// Resolve `desk`, `reference`, or a JSON config path, then apply the seed
/// override (`--seed` beats `LINVT_SEED` beats the config's own seed).
fn load_config(spec: &str, seed: Option<u64>) -> Result<Config, Error> {
    let mut cfg = match spec {
        "desk" => Config::desk(),
        "reference" => Config::reference(),
        path => {
            let text = std::fs::read_to_string(Path::new(path))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::CorruptFile(format!("config {path}: {e}")))?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    } else if let Ok(env) = std::env::var("LINVT_SEED") {
        cfg.seed = env
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("LINVT_SEED `{env}` is not a u64")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cfg: Config, weights: Option<&PathBuf>) -> Result<Model, Error> {
    match weights {
        Some(path) => Model::load(cfg, path),
        None => Model::build(cfg),
    }
}

fn text_tokens(text: Option<&str>, channels: usize) -> TextTokens {
    match text {
        Some(t) => embed_text(t, channels),
        None => TextTokens::empty(),
    }
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, args.seed)?;
    let (stream, dtype) = lvt::read(&args.input)?;
    let model = load_model(cfg.clone(), args.weights.as_ref())?;
    let text = text_tokens(args.text.as_deref(), cfg.channels);

    let clips = if args.segment {
        segment::split_clips(&stream, args.segment_threshold)?
    } else {
        vec![stream]
    };
    let mut tokens = Vec::new();
    let mut rows = 0usize;
    for clip in &clips {
        let out = model.forward(clip, &text)?;
        rows += out.tokens.shape()[0];
        tokens.extend_from_slice(out.tokens.data());
    }
    let out_stream = FrameTokenStream::from_vec(1, rows, cfg.channels, tokens)?;
    lvt::write(&args.output, &out_stream, dtype)?;
    eprintln!(
        "tokenized {} clip(s) into {rows} tokens ({} channels)",
        clips.len(),
        cfg.channels
    );
    Ok(())
}

#[derive(Serialize)]
struct MaskRow {
    frame: usize,
    selected: Vec<usize>,
    selected_scores: Vec<f64>,
    scores: Vec<f64>,
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, args.seed)?;
    let (stream, _) = lvt::read(&args.input)?;
    let model = load_model(cfg.clone(), args.weights.as_ref())?;
    let weights = model.weights().ok_or_else(|| {
        Error::InvalidConfig("the avg baseline has no scoring weights to inspect".into())
    })?;

    let k = args.top.unwrap_or(cfg.k).min(stream.total_tokens());
    if k == 0 {
        return Err(Error::Selection {
            k,
            n: stream.total_tokens(),
        });
    }
    let mut tape = Tape::new();
    let spatial = svr::score_spatial(&mut tape, &stream, &weights.scoring)?;
    let scores = svr::score_temporal(&mut tape, &stream, &spatial, &weights.scoring)?;
    let sel = svr::select_topk(&stream, &scores, k)?;

    let n = stream.tokens_per_frame();
    let mut lines = String::new();
    for t in 0..stream.frames() {
        let mut selected = Vec::new();
        let mut selected_scores = Vec::new();
        for (j, &g) in sel.global_indices.iter().enumerate() {
            if g / n == t {
                selected.push(g % n);
                selected_scores.push(sel.scores[j]);
            }
        }
        let row = MaskRow {
            frame: t,
            selected,
            selected_scores,
            scores: scores.combined.data()[t * n..(t + 1) * n].to_vec(),
        };
        lines.push_str(&serde_json::to_string(&row).expect("mask row serializes"));
        lines.push('\n');
    }
    write_atomic(&args.output, lines.as_bytes())?;
    eprintln!(
        "wrote selection mask for {} frames (k = {k}) to {}",
        stream.frames(),
        args.output.display()
    );
    Ok(())
}

fn cmd_selftest() -> i32 {
    let budget = Budget::selftest();
    let start = Instant::now();
    let reports = run_all(&budget);
    let mut failed = 0usize;
    println!("{:<44} {:<6} details", "property", "status");
    for r in &reports {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{:<44} {:<6} {}", r.name, status, r.details);
        if !r.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} properties passed in {:.1?}",
        reports.len() - failed,
        reports.len(),
        start.elapsed()
    );
    if failed > 0 {
        EXIT_SELFTEST
    } else {
        EXIT_OK
    }
}

fn task_spec(cfg: &Config, frames: usize, frame_tokens: usize, classes: usize) -> TaskSpec {
    TaskSpec::new(frames, frame_tokens, cfg.channels, classes)
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    if args.steps == 0 {
        // Reported as a usage error by the caller.
        eprintln!("linvt: --steps must be at least 1");
        std::process::exit(EXIT_USAGE);
    }
    let cfg = load_config(&args.config, args.seed)?;
    let spec = task_spec(&cfg, args.frames, args.frame_tokens, args.classes);
    let mut model = Model::build(cfg.clone())?;
    eprintln!(
        "built {} model with {} learnable parameters",
        cfg.variant.name(),
        model.parameter_count()
    );
    let mut settings = TrainSettings::new(args.steps, cfg.seed);
    settings.eval_every = args.eval_every.max(1);
    let log = train_loop(&mut model, &spec, &settings)?;

    if let Some(path) = &args.log {
        let mut lines = String::new();
        for rec in &log {
            lines.push_str(&serde_json::to_string(rec).expect("record serializes"));
            lines.push('\n');
        }
        write_atomic(path, lines.as_bytes())?;
    } else {
        let stdout = std::io::stdout();
        let mut h = stdout.lock();
        for rec in &log {
            let _ = writeln!(
                h,
                "{}",
                serde_json::to_string(rec).expect("record serializes")
            );
        }
    }
    if let Some(path) = &args.out_weights {
        model.save(path)?;
    }
    let final_acc = log.iter().rev().find_map(|r| r.eval_acc).unwrap_or(0.0);
    eprintln!(
        "trained {} steps, final loss {:.4}, held-out retrieval accuracy {:.3}",
        log.len(),
        log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        final_acc
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let base = load_config(&args.config, args.seed)?;
    if args.steps == 0 {
        eprintln!("linvt: --steps must be at least 1");
        std::process::exit(EXIT_USAGE);
    }
    let spec = task_spec(&base, args.frames, args.frame_tokens, args.classes);
    let mut rows = Vec::new();
    let mut file_lines = String::new();
    for variant in Variant::ALL {
        let cfg = base.for_variant(variant);
        cfg.validate()?;
        let mut model = Model::build(cfg.clone())?;
        let untrained_acc = eval_retrieval(&model, &spec, cfg.seed, args.eval_tasks)?;
        let trained_acc = if variant == Variant::Avg {
            untrained_acc
        } else {
            let mut settings = TrainSettings::new(args.steps, cfg.seed);
            settings.eval_every = args.steps; // evaluate once at the end
            settings.eval_tasks = 0;
            train_loop(&mut model, &spec, &settings)?;
            eval_retrieval(&model, &spec, cfg.seed, args.eval_tasks)?
        };
        let swap = if variant == Variant::Avg || spec.n_classes < 2 {
            None
        } else {
            Some(text_swap_rates(&model, &spec, cfg.seed, args.eval_tasks)?)
        };
        let row = json!({
            "variant": variant.name(),
            "untrained_acc": untrained_acc,
            "trained_acc": trained_acc,
            "text_swap_changed": swap.map(|s| s.0),
            "text_swap_both_correct": swap.map(|s| s.1),
        });
        println!("{row}");
        file_lines.push_str(&row.to_string());
        file_lines.push('\n');
        rows.push((variant, trained_acc));
    }
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let ordering: Vec<&str> = rows.iter().map(|(v, _)| v.name()).collect();
    let summary = json!({ "ordering_by_trained_acc": ordering });
    println!("{summary}");
    file_lines.push_str(&summary.to_string());
    file_lines.push('\n');
    if let Some(path) = &args.log {
        write_atomic(path, file_lines.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    if args.iters == 0 {
        eprintln!("linvt: --iters must be at least 1");
        std::process::exit(EXIT_USAGE);
    }
    let cfg = load_config(&args.config, args.seed)?;
    let (stream, _) = lvt::read(&args.input)?;
    let model = Model::build(cfg.clone())?;
    let text = text_tokens(args.text.as_deref(), cfg.channels);

    // Warm-up pass also gives the output size.
    let out = model.forward(&stream, &text)?;
    let out_tokens = out.tokens.shape()[0];
    let mut latencies = Vec::with_capacity(args.iters);
    for _ in 0..args.iters {
        let t0 = Instant::now();
        let _ = model.forward(&stream, &text)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pct = |p: f64| latencies[((latencies.len() - 1) as f64 * p).round() as usize];
    let median = pct(0.5);
    let total = stream.total_tokens();
    let report = json!({
        "frames": stream.frames(),
        "input_tokens": total,
        "output_tokens": out_tokens,
        "compression_ratio": total as f64 / out_tokens as f64,
        "iters": args.iters,
        "latency_ms_p50": median,
        "latency_ms_p90": pct(0.9),
        "latency_ms_p99": pct(0.99),
        "tokens_per_sec": total as f64 / (median / 1e3),
    });
    println!("{report}");
    Ok(())
}
