use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "psa",
    version,
    about = "Principal sensitivity analysis of small classifiers"
)]
pub struct Cli {
    /// Output directory [default: $PSA_OUT_DIR, else ./psa-out]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Worker threads for gradient fields and sparse code steps
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate the synthetic corrupted-digit dataset
    Gen(GenArgs),
    /// Convert an MNIST IDX image/label pair into a dataset file
    Ingest(IngestArgs),
    /// Train a classifier with mini-batch SGD
    Train(TrainArgs),
    /// Sensitivity kernel, standard map and principal sensitivity maps of one class
    Psa(PsaArgs),
    /// Sparse PSA of one class
    Sparse(SparseArgs),
    /// Pairwise local sensitivity tables
    Pairwise(PairwiseArgs),
    /// Re-render maps stored in a decomposition, sparse model or kernel file
    Render(RenderArgs),
    /// Re-run a command from a recorded config file
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Psa(_) => "psa",
            Command::Sparse(_) => "sparse",
            Command::Pairwise(_) => "pairwise",
            Command::Render(_) => "render",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test sizes
    #[arg(long, value_delimiter = ',', default_value = "10000,2000,2000")]
    pub sizes: Vec<usize>,
    /// Use 50000,10000,10000 regardless of --sizes
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, default_value_t = 0.2)]
    pub flip_prob: f64,
    /// Standard deviation of the additive noise (default: sqrt(0.1))
    #[arg(long, default_value_t = 0.1f64.sqrt())]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitArg {
    Logistic,
    Relu,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Also report the error on this dataset
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Hidden layer widths
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = UnitArg::Logistic)]
    pub units: UnitArg,
    /// Train with dropout
    #[arg(long)]
    pub dropout: bool,
    #[arg(long, default_value_t = 0.8)]
    pub input_keep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub hidden_keep: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PsaArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub class: usize,
    /// Number of leading maps to render
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Image width and height, e.g. 28x28
    #[arg(long, default_value = "28x28")]
    pub shape: String,
    /// Also write the kernel matrix
    #[arg(long)]
    pub save_kernel: bool,
    /// Also write PNG copies of the images
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionArg {
    /// L1 on the maps, unit-norm codes
    SparseAtoms,
    /// L1 on the codes, maps in the unit ball
    SparseCodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Psm,
    Random,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SparseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub class: usize,
    /// Decomposition from `psa` to initialize from instead of recomputing it
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, value_enum, default_value_t = ConventionArg::SparseAtoms)]
    pub convention: ConventionArg,
    #[arg(long, value_enum, default_value_t = InitArg::Psm)]
    pub init: InitArg,
    #[arg(long, default_value = "28x28")]
    pub shape: String,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,9")]
    pub classes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Pixels per table cell in the heatmaps
    #[arg(long, default_value_t = 12)]
    pub cell: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    /// A .psae, .psas or .psak file (detected by magic)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value = "28x28")]
    pub shape: String,
    /// Nearest-neighbour enlargement factor
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `<command>.config.json` written by an earlier run
    pub config: PathBuf,
}

/// Everything needed to repeat a run; written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub threads: usize,
    #[serde(flatten)]
    pub command: Command,
}
