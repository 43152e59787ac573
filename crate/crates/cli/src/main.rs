use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rellda::error::{ConfigError, CorpusError, ModelFileError, NumericalError};

mod commands;
mod params;

use params::TrainParams;

/// Relation clustering with RelLDA: sparse stochastic variational inference
/// and a collapsed Gibbs baseline.
#[derive(Parser)]
#[command(name = "rellda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a featurized corpus and write its canonical form.
    Ingest(IngestArgs),
    /// Partition a corpus into train and eval sets by document.
    Split(SplitArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train every combination of R, a, b and c and rank the results.
    Grid(GridArgs),
    /// Held-out perplexity of a model.
    Eval(EvalArgs),
    /// Rank the sentences most strongly associated with each relation.
    Report(ReportArgs),
    /// Align SSVI and Gibbs metrics logs on the document-sweep axis.
    Compare(CompareArgs),
    /// Generate a planted synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "all")]
    pub features: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "all")]
    pub features: String,
    #[arg(long, default_value_t = 0.1)]
    pub eval_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub eval_out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out corpus for perplexity checkpoints.
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    /// TOML file of training parameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file; metrics go next to it as `<stem>.metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: TrainParams,
}

#[derive(Args)]
pub struct GridArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for per-cell models and `summary.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub params: TrainParams,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Overrides the protocol stored in the model file.
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub burnin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub ssvi: PathBuf,
    #[arg(long)]
    pub gibbs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(short = 'R', long, default_value_t = 5)]
    pub relations: usize,
    #[arg(long, default_value_t = 500)]
    pub documents: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_documents: usize,
    #[arg(long, default_value_t = 3)]
    pub min_sentences: usize,
    #[arg(long, default_value_t = 6)]
    pub max_sentences: usize,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_concentration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::UnknownFeatureName(_)
        | CorpusError::EmptyFeatureSet
        | CorpusError::InvalidFraction(_)
        | CorpusError::DegenerateSplit { .. } => 2,
        _ => 3,
    }
}

/// 2 for configuration errors, 3 for bad or unreadable data, 4 for numerical aborts.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rellda::Error>() {
            return match e {
                rellda::Error::Config(_) => 2,
                rellda::Error::Corpus(c) => corpus_code(c),
                rellda::Error::Numerical(_) => 4,
                rellda::Error::ModelFile(_) | rellda::Error::Io { .. } => 3,
            };
        }
        if let Some(c) = cause.downcast_ref::<CorpusError>() {
            return corpus_code(c);
        }
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if cause.is::<NumericalError>() {
            return 4;
        }
        if cause.is::<ModelFileError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>()
        {
            return 3;
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Grid(a) => commands::grid(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Compare(a) => commands::compare(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
