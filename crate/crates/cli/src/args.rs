use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "devscore", version, about = "Weakly supervised anomaly scoring with deviation networks")]
#[command(args_conflicts_with_subcommands = true, args_override_self = true)]
pub struct Cli {
    /// Re-run the command recorded in a manifest file.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and split it into train/test files.
    Synth(SynthArgs),
    /// Train a scoring network on a synthesized split.
    Train(TrainArgs),
    /// Write per-sample scores, deviations and tail probabilities.
    Score(ScoreArgs),
    /// Compute AUC-ROC and the F1 curve on a labeled bag file.
    Eval(EvalArgs),
    /// Produce a saliency map for one image bag.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory.
    #[arg(long, env = "DEVSCORE_OUT", default_value = "devscore_out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Tabular,
    Texture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Deviation,
    Focal,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: DataKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutDir,
    /// Labeled anomalies placed in the training set.
    #[arg(long)]
    pub n_labeled: Option<usize>,
    /// Anomalies hidden in the normal pool, as a fraction of its size.
    #[arg(long)]
    pub contamination: Option<f64>,
    /// Allow contamination above the 20% cap.
    #[arg(long)]
    pub allow_high_contamination: bool,
    /// Draw labeled anomalies from this class only and test on the others.
    #[arg(long, value_name = "CLASS")]
    pub open_set_class: Option<u32>,
    /// Share of normal samples held out for testing.
    #[arg(long)]
    pub test_normal_fraction: Option<f64>,
    /// Number of normal samples (or images) generated.
    #[arg(long)]
    pub n_normal: Option<usize>,
    /// Texture only: anomalous images per defect type.
    #[arg(long)]
    pub n_per_defect: Option<usize>,
    /// Texture only: image side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Texture only: patch side in pixels.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Texture only: patch stride in pixels.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Texture only: per-pixel noise standard deviation.
    #[arg(long)]
    pub noise_std: Option<f64>,
}

impl SynthArgs {
    pub fn texture_flags_used(&self) -> Vec<&'static str> {
        let mut used = Vec::new();
        let flags = [
            ("--n-per-defect", self.n_per_defect.is_some()),
            ("--image-size", self.image_size.is_some()),
            ("--patch-size", self.patch_size.is_some()),
            ("--stride", self.stride.is_some()),
            ("--noise-std", self.noise_std.is_some()),
        ];
        for (name, set) in flags {
            if set {
                used.push(name);
            }
        }
        used
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train_normal.jsonl and train_anomaly.jsonl.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutDir,
    /// Anomalies scored against 10% held-out normals after every epoch.
    #[arg(long, value_name = "FILE")]
    pub validation: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deviation")]
    pub loss: LossArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iters_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Fraction of instances averaged into the bag score.
    #[arg(long)]
    pub k_fraction: Option<f64>,
    /// Deviation margin for labeled anomalies.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub prior_mu: Option<f64>,
    #[arg(long)]
    pub prior_sigma: Option<f64>,
    /// Reference scores drawn per batch.
    #[arg(long)]
    pub prior_l: Option<usize>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub focal_alpha: Option<f64>,
    /// Feature-layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelInput {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Bag file (JSONL).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[command(flatten)]
    pub out: OutDir,
    /// Training normals; enables the open-space risk estimate.
    #[arg(long, value_name = "FILE")]
    pub risk_normals: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub risk_samples: usize,
    #[arg(long, default_value_t = devscore::eval::Z_95)]
    pub risk_threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub image_id: u64,
}
