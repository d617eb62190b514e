//! Command-line front end: corpus generation, pretraining, fine-tuning,
//! evaluation, parameter counting and gradient checking.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{ModelArgs, TaskArg};

#[derive(Debug, Parser)]
#[command(
    name = "trans-blstm",
    version,
    about = "Transformer encoders with fused bidirectional LSTMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic template corpus and its vocabulary
    GenCorpus(GenCorpusArgs),
    /// Pretrain with masked-LM and next-sentence losses
    Pretrain(PretrainArgs),
    /// Fine-tune on a synthetic classification or span task
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint
    Eval(EvalArgs),
    /// Print the parameter count of a configuration
    CountParams(CountParamsArgs),
    /// Compare backward-pass gradients with finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Vocabulary size, including the 5 reserved tokens
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    /// Number of documents
    #[arg(long, default_value_t = 400)]
    pub docs: usize,
    /// Probability that a token is followed by its template successor
    #[arg(long, default_value_t = 0.97)]
    pub successor_prob: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (receives corpus.txt, vocab.txt, run.toml)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Corpus file: one sentence per line, blank lines between documents [required]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocab file, one token per line [default: vocab.txt beside the corpus, else induced from the corpus]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output directory (receives metrics.tsv, checkpoint.bin, vocab.txt, run.toml) [required]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from this pretraining checkpoint [default: none]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Maximum sequence length [default: preset: toy 32, small 128, base/large 256]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Batch size [default: preset: toy 32, small 32, base/large 256]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Peak learning rate [default: preset: toy 1e-2, small 1e-3, base/large 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Total optimizer steps of the schedule [default: preset: toy 2000, small 5000, base/large 100000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Random seed for initialization, sampling, masking and dropout [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw the 80/10/10 replacement per piece instead of per word
    #[arg(long, default_value_t = false)]
    pub per_piece: bool,
    /// Write 0 in the metrics ms column so reruns are byte-identical
    #[arg(long, default_value_t = false)]
    pub no_wall_time: bool,
    /// Also save checkpoint-<step>.bin every N steps; 0 saves only the final checkpoint
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Task [default: classify]
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Pretraining checkpoint whose encoder initializes the task model [default: none, random init]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of classes for the classification task [default: 2]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Number of synthetic training examples [default: 600]
    #[arg(long)]
    pub examples: Option<usize>,
    /// Batch size [default: 12]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Peak learning rate [default: 3e-5]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training epochs [default: 2]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 0 in the metrics ms column so reruns are byte-identical
    #[arg(long, default_value_t = false)]
    pub no_wall_time: bool,
    /// Output directory (receives metrics.tsv, checkpoint.bin, run.toml) [required]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus for a pretraining checkpoint [default: none]
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocab for a pretraining checkpoint [default: vocab.txt beside the corpus]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Evaluation batches drawn from the corpus
    #[arg(long, default_value_t = 8)]
    pub batches: usize,
    /// Batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Maximum sequence length [default: the checkpoint's position table size]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Synthetic examples for a task checkpoint
    #[arg(long, default_value_t = 600)]
    pub examples: usize,
    /// Random seed for sampling evaluation data
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print only the JSON record
    #[arg(long, default_value_t = false)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Accepted for symmetry with other commands; checks always use small fixed shapes
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: settings::PresetArg,
    /// Layer to check: trans, trans-blstm-1, trans-blstm-2, pure-blstm, decoder, or all
    #[arg(long, default_value = "all")]
    pub block: String,
    /// BLSTM units per direction
    #[arg(long, value_enum, default_value = "half")]
    pub blstm_hidden: settings::WidthArg,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Random seed for inputs and parameters
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::CountParams(a) => commands::count_params(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
