//! `apec`: corpus statistics, demonstration indexing, initial adaptation,
//! post-editing cycles, evaluation and ensembling from the command line.
//!
//! Exit codes: 0 success, 1 failed table check, 2 usage, 3 configuration or
//! input, 4 model provider, 5 partial run (some documents missing or aborted).

mod artifacts;
mod commands;
mod config;
mod providers;

use std::path::PathBuf;
use std::process::ExitCode;

use apec_core::generation::Task;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::providers::{EmbedderSpec, ProviderSpec, TokenizerSpec};

#[derive(Parser, Debug)]
#[command(name = "apec", version, about = "Spanish Plain Language and Easy Read adaptation with post-editing cycles")]
struct Cli {
    /// TOML run configuration; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed for random demonstrations and splits
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Documents processed concurrently
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus statistics: counts, readability, source/reference similarity
    Stats(StatsArgs),
    /// Build a BM25 index over training sources
    Index(IndexArgs),
    /// Produce initial adaptations
    Adapt(AdaptArgs),
    /// Run post-editing cycles over initial adaptations
    Refine(RefineArgs),
    /// Score outputs against references
    Evaluate(EvaluateArgs),
    /// Pick the best-scoring refined adaptation per document across streams
    Ensemble(EnsembleArgs),
    /// Recompute the published result averages
    Tablecheck,
    /// Seeded train/dev split of a corpus
    Split(SplitArgs),
    /// Drop documents over the context token budget
    Filter(FilterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Source,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Zero-shot
    Zs,
    /// Random demonstrations
    FsRdm,
    /// BM25-retrieved demonstrations
    FsBm25,
    /// Embedding-retrieved demonstrations
    FsEmb,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Zs => "zs",
            Mode::FsRdm => "fs-rdm",
            Mode::FsBm25 => "fs-bm25",
            Mode::FsEmb => "fs-emb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodingArg {
    Greedy,
    Sampled,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Corpus file (.jsonl or .csv)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "source")]
    side: SideArg,
    #[arg(long, value_enum, default_value = "none")]
    embedder: EmbedderSpec,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Training corpus with references
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    min_token_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Documents to adapt
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Training corpus supplying demonstrations
    #[arg(long)]
    train: Option<PathBuf>,
    /// Prebuilt BM25 index over the training corpus
    #[arg(long)]
    index: Option<PathBuf>,
    /// Admissible adaptation/source length ratio, as lo,hi
    #[arg(long, value_parser = parse_ratio)]
    ratio: Option<(f64, f64)>,
    /// Demonstrations per prompt
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "http")]
    provider: ProviderSpec,
    /// Needed for fs-emb only
    #[arg(long, value_enum, default_value = "none")]
    embedder: EmbedderSpec,
    #[arg(long, value_enum)]
    decoding: Option<DecodingArg>,
    /// Only adapt documents of this task
    #[arg(long)]
    task: Option<Task>,
    /// Stream name recorded with each adaptation (default: the mode)
    #[arg(long)]
    stream: Option<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Initial adaptations (records with doc_id and adaptation or final)
    #[arg(long)]
    input: PathBuf,
    /// Documents being adapted
    #[arg(long)]
    corpus: PathBuf,
    /// Training corpus supplying demonstrations
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value = "http")]
    provider: ProviderSpec,
    #[arg(long, value_enum, default_value = "http")]
    embedder: EmbedderSpec,
    #[arg(long)]
    cycles: Option<u32>,
    /// Demonstrations per prompt
    #[arg(long)]
    k: Option<usize>,
    /// Stream name for the traces (default: input file name)
    #[arg(long)]
    stream: Option<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Adaptations or traces
    #[arg(long)]
    input: PathBuf,
    /// Documents with references
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "http")]
    embedder: EmbedderSpec,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Trace files, one per stream
    #[arg(long = "traces", num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    /// Stream names in tie-breaking order, comma separated
    #[arg(long, value_delimiter = ',')]
    priority: Vec<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    append: bool,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 240)]
    dev_size: usize,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    dev_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = apec_core::corpus::DEFAULT_TOKEN_BUDGET)]
    budget: usize,
    #[arg(long, value_enum, default_value = "whitespace")]
    tokenizer: TokenizerSpec,
    #[arg(long)]
    output: PathBuf,
    /// Where to write the dropped documents
    #[arg(long)]
    dropped: Option<PathBuf>,
}

fn parse_ratio(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(format!("need 0 <= lo <= hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(summary)) => {
            eprintln!("apec: partial run: {summary}");
            ExitCode::from(5)
        }
        Ok(commands::Outcome::Failed(summary)) => {
            eprintln!("apec: {summary}");
            ExitCode::from(1)
        }
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("apec: error: {e:#}");
            ExitCode::from(code)
        }
    }
}
