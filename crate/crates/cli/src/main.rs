use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "subreg", version, about = "Unigram subword segmentation, NMT training and multi-segmentation decoding")]
struct Cli {
    /// Root seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and warnings on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a unigram vocabulary from a text file.
    Vocab(VocabArgs),
    /// Segment standard input line by line.
    Segment(SegmentArgs),
    /// Train an encoder-decoder model.
    Train(TrainArgs),
    /// Translate standard input line by line.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu(BleuArgs),
    /// Run a strategy comparison or size sweep on synthetic data.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    pub max_piece_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SegmentMode {
    Viterbi,
    Sample,
    Nbest,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = SegmentMode::Viterbi)]
    pub mode: SegmentMode,
    #[arg(long, default_value_t = subreg::unigram::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Optional dev set; the checkpoint with the lowest dev loss is kept.
    #[arg(long, requires = "dev_tgt")]
    pub dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    pub dev_tgt: Option<PathBuf>,
    /// vanilla or subreg
    #[arg(long, default_value = "vanilla")]
    pub mode: String,
    #[arg(long, default_value_t = subreg::unigram::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_smoothing: f64,
    #[arg(long, default_value_t = subreg::model::DEFAULT_EMB_DIM)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = subreg::model::DEFAULT_HIDDEN_DIM)]
    pub hidden_dim: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics TSV (defaults to `<out>.metrics.tsv`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Comma-separated checkpoint or lookup-model files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// single, nbest, proposed, ensemble or combined
    #[arg(long, default_value = "single")]
    pub strategy: String,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = subreg::unigram::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 100)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub length_norm: f64,
    /// Write per-line scores and segmentations as TSV.
    #[arg(long)]
    pub dump_scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BleuArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for `results.tsv` and `summary.md`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Settings shared by every subcommand.
pub struct Globals {
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Globals {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let globals = Globals {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Vocab(a) => commands::vocab(&globals, a),
        Command::Segment(a) => commands::segment(&globals, a),
        Command::Train(a) => commands::train(&globals, a),
        Command::Translate(a) => commands::translate(&globals, a),
        Command::Bleu(a) => commands::bleu(&globals, a),
        Command::Experiment(a) => commands::experiment(&globals, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
