use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use xlab_core::extraction::{Protocol, TargetMode};
use xlab_core::noise::{Coupling, NoiseKind};

/// Noise-stimulus model extraction laboratory.
///
/// Trains a victim CNN on an MNIST-family dataset, queries it with noise
/// images and fits a clone to the responses. Every command writes its
/// artifacts and a manifest.json to the output directory and prints the
/// manifest path.
#[derive(Parser, Debug)]
#[command(name = "xlab", version, max_term_width = 100)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML file with defaults (data_root, output_root, registry, threads, [seeds]).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root of the standard dataset layout: <root>/<name>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz].
    #[arg(long, global = true, env = "XLAB_DATA_ROOT", value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    /// Registry file with lines `name train-images train-labels test-images test-labels`;
    /// replaces the standard layout.
    #[arg(long, global = true, value_name = "FILE")]
    pub registry: Option<PathBuf>,
    /// Worker threads. Results are identical for any value.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Train the reference victim network and save its checkpoint.
    TrainVictim(TrainVictimArgs),
    /// Generate a stimulus file from one noise distribution.
    GenerateStimuli(GenerateArgs),
    /// Query a victim checkpoint with a stimulus file.
    Query(QueryArgs),
    /// Run the full extraction pipeline and write the report.
    Extract(ExtractArgs),
    /// Train one clone per Ising beta stratum (accuracy/loss vs beta).
    SweepBeta(SweepBetaArgs),
    /// One reduced extraction per noise distribution against a shared victim.
    CompareDistributions(CompareArgs),
    /// Tabulate pre/post accuracy and hardness ratio over report files.
    Summarize(SummarizeArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainVictim(_) => "train-victim",
            Command::GenerateStimuli(_) => "generate-stimuli",
            Command::Query(_) => "query",
            Command::Extract(_) => "extract",
            Command::SweepBeta(_) => "sweep-beta",
            Command::CompareDistributions(_) => "compare-distributions",
            Command::Summarize(_) => "summarize",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SeedArgs {
    /// Seed for victim initialisation, shuffling and dropout.
    #[arg(long)]
    pub victim_seed: Option<u64>,
    /// Seed for stimulus generation.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Seed for the extracted model's initialisation and shuffling.
    #[arg(long)]
    pub extract_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct VictimArgs {
    /// Load the victim from this checkpoint instead of training one.
    #[arg(long, value_name = "CHECKPOINT")]
    pub reuse_victim: Option<PathBuf>,
    /// Victim training epochs.
    #[arg(long, default_value_t = 12)]
    pub victim_epochs: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct NoiseArgs {
    /// Ising interaction sign: +1 (aligned neighbours) or -1.
    #[arg(long, default_value = "+1", allow_negative_numbers = true)]
    pub coupling: Coupling,
    /// Metropolis sweeps per Ising sample.
    #[arg(long, default_value_t = xlab_core::noise::DEFAULT_SWEEPS)]
    pub sweeps: usize,
    /// Clamp real-valued noise (normal, gumbel) into [0, 1].
    #[arg(long)]
    pub clip: bool,
    /// Bernoulli success probabilities, comma-separated (default 0.01,0.11,...,0.91).
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<f64>>,
    /// Ising inverse temperatures, comma-separated (default 0.0,0.1,...,0.9).
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainVictimArgs {
    /// Dataset name in the registry (mnist, kmnist, fashion_mnist, notmnist, ...).
    #[arg(long)]
    pub dataset: String,
    /// Training epochs.
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Training seed (defaults to the victim seed from the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default <output_root>/train-victim).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// bernoulli-sweep | uniform | normal | gumbel | bernoulli-half | ising
    #[arg(long)]
    pub noise: NoiseKind,
    /// Number of stimuli.
    #[arg(long)]
    pub count: usize,
    /// Generation seed (defaults to the noise seed from the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub noise_args: NoiseArgs,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct QueryArgs {
    /// Victim checkpoint.
    #[arg(long)]
    pub victim: PathBuf,
    /// Stimulus file from generate-stimuli.
    #[arg(long)]
    pub stimuli: PathBuf,
    /// Minibatch size.
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Dataset name in the registry (mnist, kmnist, fashion_mnist, notmnist, ...).
    #[arg(long)]
    pub dataset: String,
    /// bernoulli-sweep | uniform | normal | gumbel | bernoulli-half | ising
    #[arg(long, default_value = "bernoulli-sweep")]
    pub noise: NoiseKind,
    /// full (600000 stimuli, 50 epochs) or reduced (60000 stimuli, 10 epochs).
    #[arg(long, default_value = "full")]
    pub protocol: Protocol,
    /// Override the protocol's stimulus count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Override the protocol's extraction epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// soft (full softmax vectors) or hard (one-hot argmax).
    #[arg(long, default_value = "soft")]
    pub targets: TargetMode,
    /// Use stimuli from this file instead of generating them.
    #[arg(long, value_name = "FILE")]
    pub stimuli_file: Option<PathBuf>,
    #[command(flatten)]
    pub victim: VictimArgs,
    #[command(flatten)]
    pub noise_args: NoiseArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepBetaArgs {
    /// Dataset name in the registry (mnist, kmnist, fashion_mnist, notmnist, ...).
    #[arg(long)]
    pub dataset: String,
    /// Ising samples per beta value.
    #[arg(long, default_value_t = 7000)]
    pub count_per_beta: usize,
    /// Extraction epochs per stratum.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// soft (full softmax vectors) or hard (one-hot argmax).
    #[arg(long, default_value = "soft")]
    pub targets: TargetMode,
    #[command(flatten)]
    pub victim: VictimArgs,
    #[command(flatten)]
    pub noise_args: NoiseArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Dataset name in the registry (mnist, kmnist, fashion_mnist, notmnist, ...).
    #[arg(long)]
    pub dataset: String,
    /// Noise kinds to compare, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "uniform,normal,gumbel,bernoulli-half,ising")]
    pub kinds: Vec<NoiseKind>,
    /// full (600000 stimuli, 50 epochs) or reduced (60000 stimuli, 10 epochs).
    #[arg(long, default_value = "reduced")]
    pub protocol: Protocol,
    /// Override the protocol's stimulus count per kind.
    #[arg(long)]
    pub count: Option<usize>,
    /// Override the protocol's extraction epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// soft (full softmax vectors) or hard (one-hot argmax).
    #[arg(long, default_value = "soft")]
    pub targets: TargetMode,
    /// Print PASS/FAIL for uniform < normal,gumbel (either order) < bernoulli < ising.
    #[arg(long)]
    pub check_ordering: bool,
    #[command(flatten)]
    pub victim: VictimArgs,
    #[command(flatten)]
    pub noise_args: NoiseArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SummarizeArgs {
    /// report.json files from extract runs.
    #[arg(long, required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,
    /// Output directory (default <output_root>/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// manifest.json written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the re-run (default: the original one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
