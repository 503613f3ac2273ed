use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error (unknown flag, missing value)
  3   file could not be read or written
  4   image could not be decoded or encoded
  5   shape mismatch
  6   value out of range
  7   invalid argument or config value
  8   checkpoint belongs to a different architecture
  9   corrupt checkpoint
  10  training diverged
  11  reference masks overlap or leave gaps
  12  invalid survey record

Errors are printed on stderr as one line: error kind=<kind> code=<n>: <message>

Numeric and choice flags (not paths) may also be set in a --config file of
key=value lines, keyed by the flag's long name. Command-line flags take
precedence over the file; unknown keys are rejected.";

#[derive(Debug, Parser)]
#[command(
    name = "microcolor",
    about = "Colorize grayscale microscopy images by predicting CIELAB chroma",
    after_help = EXIT_CODES,
    disable_version_flag = true
)]
pub struct Cli {
    /// Print the program, weights and checkpoint format versions.
    #[arg(long, short = 'V', global = true)]
    pub version: bool,

    /// key=value file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shuffle a directory of images into a train/test manifest.
    DatasetSplit(SplitArgs),
    /// Train the end-to-end network on a manifest.
    Train(TrainArgs),
    /// Colorize with trained end-to-end weights.
    ColorizeEe(ColorizeEeArgs),
    /// Colorize by fitting the network on one or more reference images.
    ColorizeNst(ColorizeNstArgs),
    /// Inspection tools.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Build a shuffled real-versus-predicted survey and its hidden key.
    Survey(SurveyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// Full-size network.
    Default,
    /// Six-layer network suited to single-image fits on a CPU.
    Tiny,
    /// Three-layer network for smoke tests.
    Miniature,
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Arch as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Agg {
    Mean,
    Median,
}

impl std::str::FromStr for Agg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Agg as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Directory of png/jpg/tif images.
    #[arg(long)]
    pub dir: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction assigned to training [default: 0.9].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Shuffle seed [default: 0].
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    /// Resize target WxH recorded in the manifest [default: 300x300].
    #[arg(long)]
    pub resize: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Receives weights.ckpt, report.csv and periodic checkpoints.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Network size [default: default].
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Seeds initialization and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// [default: 0.0001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without improvement before stopping [default: 10].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Smallest validation improvement that resets patience [default: 0.0001].
    #[arg(long = "min-delta")]
    pub min_delta: Option<f64>,
    /// Save a checkpoint every N epochs, 0 for never [default: 0].
    #[arg(long = "checkpoint-every")]
    pub checkpoint_every: Option<usize>,
    /// Train without the global embedding branch.
    #[arg(long = "no-embedding")]
    pub no_embedding: bool,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    /// Luminance bin width of the same-luminance-same-chroma post-process.
    #[arg(long = "bin-width")]
    pub bin_width: Option<f64>,
    /// Aggregator for the post-process [default: mean].
    #[arg(long)]
    pub aggregate: Option<Agg>,
    /// Enable edge-guided uniform region fill at this threshold in (0, 1).
    #[arg(long = "edge-threshold")]
    pub edge_threshold: Option<f64>,
    /// 8-bit edge map replacing the built-in gradient detector.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Directory receiving L/A/B planes as comma-separated grids.
    #[arg(long = "debug-planes")]
    pub debug_planes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ColorizeEeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct ColorizeNstArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Colorful reference image; repeat for several.
    #[arg(long = "reference", required = true)]
    pub references: Vec<PathBuf>,
    /// 8-bit mask for the reference at the same position; non-zero pixels
    /// are colored by it.
    #[arg(long = "mask")]
    pub masks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Network size [default: tiny].
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Seeds initialization and augmentation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum fit steps per reference [default: 2000].
    #[arg(long)]
    pub budget: Option<usize>,
    /// Stop a fit once its loss drops below this, in squared AB units [default: 1.0].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// [default: 0.0001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fit on the reference as-is, without shifted and mirrored views.
    #[arg(long = "no-augment")]
    pub no_augment: bool,
    /// Fit without the global embedding branch.
    #[arg(long = "no-embedding")]
    pub no_embedding: bool,
    /// Reuse and store fitted weights here, keyed by reference content.
    #[arg(long = "cache-dir")]
    pub cache_dir: Option<PathBuf>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Block-averaged HSV saturation as a CSV grid.
    Saturation {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// [default: 1]
        #[arg(long)]
        block: Option<usize>,
        /// Also render the grid as a PNG heat map.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Hue histogram of saturated pixels as CSV.
    Hue {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// [default: 36]
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Score survey records against the hidden key.
    Survey {
        /// One JSON record per line.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        key: PathBuf,
        /// Per-participant accuracies as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Edge map and region labels of a grayscale image.
    Edges {
        #[arg(long)]
        input: PathBuf,
        /// Edge strength PNG.
        #[arg(long)]
        out: PathBuf,
        /// Region label PNG.
        #[arg(long)]
        regions: Option<PathBuf>,
        /// [default: 0.3]
        #[arg(long = "edge-threshold")]
        edge_threshold: Option<f64>,
    },
    /// Local-mean binarization into a 0/1 mask PNG.
    Threshold {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Odd window side [default: 31].
        #[arg(long)]
        window: Option<usize>,
        /// [default: 0]
        #[arg(long, allow_negative_numbers = true)]
        offset: Option<f64>,
        /// Write 255 instead of 1 for foreground.
        #[arg(long)]
        visible: bool,
    },
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    /// File with 16 real image ids, one per line.
    #[arg(long)]
    pub real: PathBuf,
    /// File with 16 predicted image ids, one per line.
    #[arg(long)]
    pub predicted: PathBuf,
    /// Presentation order, one id per line.
    #[arg(long)]
    pub order: PathBuf,
    /// Hidden class key as JSON.
    #[arg(long)]
    pub key: PathBuf,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}
