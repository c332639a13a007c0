use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codesum::corpus::{DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT};
use codesum::decoding::DEFAULT_MAX_DECODE_LEN;
use codesum::model::ModelKind;
use codesum::training::DEFAULT_LEARNING_RATE;

mod commands;
mod io;

#[derive(Parser)]
#[command(name = "codesum", version, about = "Generate one-line summaries of Java methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize and length-filter raw method/comment pairs (JSON lines).
    Preprocess {
        /// Input files, one `{"method": ..., "comment": ...}` object per line.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into disjoint train/val/test corpora.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// small, medium or large; overrides the explicit sizes.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        train: usize,
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build source and target vocabularies from a corpus.
    Vocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: VocabLimits,
    },
    /// Train a model, writing vocabularies, checkpoints and an epoch log.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        limits: VocabLimits,
    },
    /// Train one model per grid point and rank them by validation perplexity.
    Grid {
        #[arg(long, value_enum, default_value_t = Kind::Transformer)]
        model: Kind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.0001")]
        lr: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        layers: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "256")]
        d_model: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "8")]
        heads: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        limits: VocabLimits,
    },
    /// Corpus BLEU and test perplexity of a checkpoint.
    Eval {
        #[command(flatten)]
        model: Checkpoint,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Summarize methods read from a file or standard input. Blank lines
    /// separate methods; one summary line is printed per method.
    Summarize {
        #[command(flatten)]
        model: Checkpoint,
        input: Option<PathBuf>,
    },
    /// Export the cross-attention of one summarized method as JSON.
    Attention {
        #[command(flatten)]
        model: Checkpoint,
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write generated accessor-style pairs as JSON lines.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Transformer,
    Seq2seq,
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Transformer => ModelKind::Transformer,
            Kind::Seq2seq => ModelKind::Seq2Seq,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct VocabLimits {
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SIZE)]
    max_size: usize,
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Kind::Transformer)]
    model: Kind,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    d_model: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    /// Per-head query/key width; defaults to d_model / heads.
    #[arg(long)]
    d_k: Option<usize>,
    /// Per-head value width; defaults to d_model / heads.
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long, default_value_t = 512)]
    d_ff: usize,
    /// Recurrent model embedding width.
    #[arg(long, default_value_t = 256)]
    embed: usize,
    /// Recurrent model hidden width per direction.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
}

#[derive(Args, Clone)]
struct Checkpoint {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding src.vocab and tgt.vocab; defaults to the
    /// checkpoint's directory.
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_DECODE_LEN)]
    max_len: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
