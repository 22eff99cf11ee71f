use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

#[derive(Parser, Debug)]
#[command(name = "posetrack", version, about = "Link per-frame pose detections into tracks and evaluate them")]
struct Cli {
    /// Worker threads for parallel stages (defaults to one per core).
    #[arg(long, global = true, env = "POSETRACK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign track ids to a prediction file or directory.
    Track(TrackArgs),
    /// Score tracked predictions against ground truth.
    Eval(EvalArgs),
    /// Run the cross-product of tracking settings and write one CSV row each.
    Sweep(SweepArgs),
    /// Inject ground-truth identities and/or keypoints into predictions.
    Oracle(OracleArgs),
    /// Write a synthetic ground-truth / prediction pair.
    Synth(SynthArgs),
    /// Time tracking at several video lengths.
    Bench(BenchArgs),
    /// Print the tube anchor grid for an image size.
    Anchors(AnchorArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostArg {
    Iou,
    Pckh,
    Feat,
    Combined,
    External,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoArg {
    Hungarian,
    Greedy,
    Random,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct LinkArgs {
    #[arg(long, value_enum, default_value_t = CostArg::Iou)]
    pub cost: CostArg,
    #[arg(long, value_enum, default_value_t = AlgoArg::Hungarian)]
    pub algo: AlgoArg,
    /// Weights for iou, pckh and cosine when --cost combined.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    pub weights: Vec<f64>,
    /// Per-edge score table for --cost external.
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub det_thresh: f64,
    #[arg(long, default_value_t = 1.95)]
    pub kp_thresh: f64,
    /// Links need similarity strictly above this.
    #[arg(long, default_value_t = 0.0)]
    pub min_sim: f64,
    /// Frames a track stays matchable after its last detection.
    #[arg(long, default_value_t = 1)]
    pub lookback: usize,
    /// Seed for --algo random.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub random_max_id: u64,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    /// Prediction file, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Output file (or directory when --pred is a directory).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub link: LinkArgs,
    /// Comma-separated file-to-canonical joint order.
    #[arg(long, value_delimiter = ',')]
    pub joint_map: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
    /// Also write the table row as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("axes").required(true).multiple(true).args(["thresholds", "algos", "costs", "lookbacks"])))]
pub struct SweepArgs {
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// Untracked predictions.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub thresholds: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1..)]
    pub algos: Vec<AlgoArg>,
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1..)]
    pub costs: Vec<CostArg>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lookbacks: Vec<usize>,
    /// Settings for every axis not swept.
    #[command(flatten)]
    pub link: LinkArgs,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleArg {
    Assoc,
    Kpts,
    /// Keypoints, then association.
    Both,
    /// Association, then keypoints.
    BothAssocFirst,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// Tracked predictions.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: OracleArg,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MotionArg {
    Linear,
    Sinusoidal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LayoutArg {
    Free,
    Columns,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives gt/ and pred/ subdirectories.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Scenario JSON; flags given explicitly override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of videos, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub videos: u64,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub actors: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long, value_enum)]
    pub motion: Option<MotionArg>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    #[arg(long)]
    pub occlusion: Option<f64>,
    #[arg(long)]
    pub kp_jitter: Option<f64>,
    #[arg(long)]
    pub box_jitter: Option<f64>,
    #[arg(long)]
    pub miss_prob: Option<f64>,
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub hard_fraction: Option<f64>,
    #[arg(long)]
    pub label_every: Option<usize>,
    /// Start from the zero-noise preset.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [100usize, 200, 400])]
    pub frames: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub actors: usize,
    /// Timed runs per length; the median is reported.
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the results as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnchorArgs {
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = 8.0)]
    pub stride: f64,
    #[arg(long, default_value_t = 3)]
    pub frames: usize,
    /// Write every anchor box as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    if let Err(e) = commands::configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Track(a) => commands::track(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
        Command::Anchors(a) => commands::anchors(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
