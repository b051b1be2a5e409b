//! `ratnmt`: tokenizer training, TM indexing and retrieval, model training,
//! translation, evaluation, latency benchmarks and synthetic corpora.
//!
//! Every run appends a manifest line to `<run-dir>/manifest.jsonl`. Errors
//! are printed to stderr as one JSON object per line: `{"error": kind,
//! "message": text}`. Exit codes: 0 success, 1 runtime or config error,
//! 2 usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ratnmt", version, about = "Retrieval-augmented translation workbench")]
struct Cli {
    /// Directory whose manifest.jsonl receives this run's manifest.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE vocabulary from text files (TSV lines contribute every column).
    TokenizerTrain(TokenizerTrainArgs),
    /// Build and save a BM25 index over a translation memory.
    IndexBuild(IndexBuildArgs),
    /// Print the top-k fuzzy matches of queries as TSV.
    Retrieve(RetrieveArgs),
    /// Train a model; checkpoints and loss.tsv go to --out.
    Train(TrainArgs),
    /// Translate sentences with a checkpoint.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate(EvaluateArgs),
    /// Paired bootstrap significance test between two systems.
    Significance(SignificanceArgs),
    /// Per-sentence latency of one or more checkpoints.
    Bench(BenchArgs),
    /// Finite-difference gradient checks of every op and of a tiny model.
    GradCheck(GradCheckArgs),
    /// Generate planted-match train/test/memory corpora.
    MakeSynthetic(MakeSyntheticArgs),
}

#[derive(Args, Debug)]
pub struct TokenizerTrainArgs {
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub tm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub tm: PathBuf,
    /// Prebuilt index; built on the fly when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
    pub query: Option<String>,
    /// File with one query per line; rows are prefixed with the line number.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key = value file with model and training settings.
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    /// Training pairs, source TAB target; also the training-time memory.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out pairs scored at every log step, with matches from the training memory.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Continue from a checkpoint, with the settings stored in it.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    /// Override max_steps when resuming.
    #[arg(long, requires = "resume")]
    pub max_steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Translation memory; without it every variant runs without matches.
    #[arg(long)]
    pub tm: Option<PathBuf>,
    /// key = value decoding settings (beam_size, max_output_len, length_penalty_alpha).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub text: Option<String>,
    /// One source sentence per line (TSV lines: first column).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write translations here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sentence TSV trace: retrieved ids, pass lengths, memory length, timings.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Also write the TSV report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SignificanceArgs {
    #[arg(long)]
    pub hyp_a: PathBuf,
    #[arg(long)]
    pub hyp_b: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = ratnmt::evaluation::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = ratnmt::evaluation::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// One report row per checkpoint.
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub tm: Option<PathBuf>,
    /// One source sentence per line (TSV lines: first column).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the TSV report here; the summary tables go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variants checked end to end.
    #[arg(long = "variant", num_args = 1.., default_values_t = ["baseline".to_string(), "rat-cat".to_string(), "rat-sep".to_string(), "rat-si".to_string()])]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakeSyntheticArgs {
    /// key = value generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    match commands::run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(1)
        }
    }
}
