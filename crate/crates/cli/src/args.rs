use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pitn_core::signal::BpType;

#[derive(Debug, Parser)]
#[command(name = "pitn", version, about = "Personalized beat-to-beat blood-pressure regression")]
pub struct Cli {
    /// Seed for generation, splitting and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(short = 'o', long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for per-subject jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic recordings as signal and label CSVs.
    Synth(SynthArgs),
    /// Segment and featurize recordings into beat files.
    Preprocess(PreprocessArgs),
    /// Draw the minimal-training-criterion split of every subject.
    Split(SplitArgs),
    /// Train one model per subject and BP type.
    Train(TrainArgs),
    /// Write adversarial or time-reversed beats next to the clean ones.
    Augment(AugmentArgs),
    /// Evaluate trained models on the test side of their splits.
    Eval(EvalArgs),
    /// Aggregate evaluations into CSV and JSON tables.
    Report(ReportArgs),
    /// Train and evaluate over a grid of gamma or y_shift values.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_beats: Option<usize>,
    /// Number of subjects; each gets its own seed offset.
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of `<subject>.signal.csv` and `<subject>.labels.csv` pairs.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub fixed_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Directory of beat files.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub bp: Option<Vec<BpArg>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BpArg {
    Sbp,
    Dbp,
}

impl From<BpArg> for BpType {
    fn from(b: BpArg) -> Self {
        match b {
            BpArg::Sbp => BpType::Sbp,
            BpArg::Dbp => BpType::Dbp,
        }
    }
}

/// Training hyperparameters settable from the command line.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub y_shift: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Disable the physics, adversarial and contrastive terms.
    #[arg(long)]
    pub base: bool,
    #[arg(long)]
    pub no_adversarial: bool,
    #[arg(long)]
    pub no_contrastive: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of beat files.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Directory of split files.
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub bp: Option<Vec<BpArg>>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentMode {
    Pgd,
    Flip,
    Both,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    /// Directory of trained models; required for PGD.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AugmentMode::Pgd)]
    pub mode: AugmentMode,
    /// Split (and model) whose training beats are augmented.
    #[arg(long, value_enum, default_value_t = BpArg::Sbp)]
    pub bp: BpArg,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub bp: Option<Vec<BpArg>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directories, one per model column.
    #[arg(short, long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Column names, in the order of the inputs.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Gamma,
    YShift,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepParam::Gamma)]
    pub param: SweepParam,
    /// Grid values; defaults to the configured grid for the parameter.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub bp: Option<Vec<BpArg>>,
    #[command(flatten)]
    pub train: TrainOverrides,
}
