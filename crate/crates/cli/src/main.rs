//! `claimforge` command-line tool.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "claimforge", version, about = "Patent-claim parsing, toy models and auto-complete")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a numbered claim block into claims, spans and antecedent reports.
    Parse {
        /// Claim text file; stdin when omitted.
        file: Option<PathBuf>,
        #[arg(long, default_value = "unknown")]
        patent_id: String,
    },
    /// Build or inspect corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Build training records and a vocabulary from a corpus.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a decoder or classifier from scratch.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Continue training a decoder checkpoint on new records.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and numeric gradients on a tiny model.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Kind::Decoder)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate ranked completions for a context.
    Complete(CompleteArgs),
    /// Score texts with a classifier checkpoint.
    Measure {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum)]
        mode: MeasureMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = claimforge::measure::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Run experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Run the HTTP auto-complete service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic corpus with section-specific vocabulary.
    Synth {
        /// Comma-separated sections, e.g. A,G.
        #[arg(long, value_delimiter = ',', default_value = "A")]
        sections: Vec<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label every patent with all sections instead of one each.
        #[arg(long)]
        mixed: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Seed-inventor search, citation expansion and keyword filtering.
    Build {
        /// JSON corpus spec (fetched_at may be omitted).
        #[arg(long)]
        spec: PathBuf,
        /// Replay a recorded API fixture instead of calling the API.
        #[arg(long, conflicts_with = "base_url")]
        replay: Option<PathBuf>,
        #[arg(long)]
        base_url: Option<String>,
        /// Save every live API interaction to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Bulk claims JSONL ({"patent_id", "claims"} per line).
        #[arg(long)]
        claims: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a corpus file.
    Stats { corpus: PathBuf },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::DependentAlone)]
        format: Format,
        #[arg(long, default_value_t = 1000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Decoder language model on a records file.
    Lm {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = Dir::Forward)]
        direction: Dir,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// CPC or relevancy classifier on a corpus.
    Classifier {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: MeasureMode,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Segment-wise fine-tuning with CPC-label counting after each segment.
    SlowMotion {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trend report (and optional CSV) for a metrics file.
    Trend {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    n_layers: usize,
    #[arg(long, default_value_t = 2)]
    n_heads: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 128)]
    context_len: usize,
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    steps: u64,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Forward decoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    backward_checkpoint: Option<PathBuf>,
    #[arg(long)]
    relevancy_checkpoint: Option<PathBuf>,
    #[arg(long)]
    context_file: PathBuf,
    #[arg(long, value_enum, default_value_t = Dir::Forward)]
    direction: Dir,
    #[arg(long, default_value = "span")]
    extent: claimforge::generate::ExtentLevel,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    lookahead: usize,
    #[arg(long)]
    exclude: Vec<String>,
    #[arg(long)]
    include: Vec<String>,
    #[arg(long)]
    check_antecedent: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    max_tokens: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Decoder,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureMode {
    Cpc,
    Relevancy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Forward,
    Backward,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    DependentAlone,
    IndependentPrepended,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    commands::run(Cli::parse())
}
