mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tdxviz::model::BackboneKind;
use tdxviz::render::OverlayMode;
use tdxviz::sweep::SweepAxis;
use tdxviz::{Method, Normalization};

/// Explainable anomaly classification for short video clips.
#[derive(Parser, Debug)]
#[command(name = "tdxviz", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Predict one sequence and write heatmaps, contours and overlays.
    Explain(ExplainArgs),
    /// Train one model per value of a hyperparameter and tabulate test metrics.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    /// Output dataset root
    #[arg(long)]
    pub out: PathBuf,
    /// Sequences per class
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Frames per sequence
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Frame size as HxW
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// 1 (gray) or 3 (RGB)
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Comma-separated class names; must include "normal"
    #[arg(long, value_delimiter = ',', default_value = "normal,fight")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Model architecture flags shared by `train` and `sweep`.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "tiny-cnn")]
    pub backbone: BackboneKind,
    /// GRU width
    #[arg(long, default_value_t = 1024)]
    pub gru_units: usize,
    /// Dropout rate on the GRU input
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Dropout rate inside each dense block
    #[arg(long, default_value_t = 0.5)]
    pub mlp_dropout: f64,
    /// Number of dense + dropout blocks
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    #[arg(long, default_value_t = 256)]
    pub dense_width: usize,
    /// Resize frames to HxW before training (default: keep the data size)
    #[arg(long, value_parser = parse_size)]
    pub input_size: Option<(usize, usize)>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset root written by gen-data (or laid out the same way)
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ExplainArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub model: PathBuf,
    /// Sequence directory (frame PNGs + manifest.json)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "gradcam")]
    pub method: Method,
    #[arg(long, value_enum, default_value_t = Render::Both)]
    pub render: Render,
    /// Comma-separated, strictly increasing contour levels
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    pub levels: Vec<f64>,
    /// Class to explain, by name, or "predicted"
    #[arg(long, default_value = "predicted")]
    pub class: String,
    #[arg(long, default_value = "per-frame")]
    pub normalization: Normalization,
    /// Only write the prediction report
    #[arg(long)]
    pub no_render: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Render {
    Heat,
    Contour,
    Both,
}

impl Render {
    pub fn modes(self) -> &'static [OverlayMode] {
        match self {
            Render::Heat => &[OverlayMode::Heat],
            Render::Contour => &[OverlayMode::Contour],
            Render::Both => &[OverlayMode::Heat, OverlayMode::Contour],
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// neurons, dropout or blocks
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated values (dropout in percent); default is the full grid
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<u32>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Fraction of each class used for training
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("TDXVIZ_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("TDXVIZ_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
