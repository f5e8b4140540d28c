use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use tdxviz::contour::{extract_contours, validate_levels};
use tdxviz::gradcam::{capture_bundle, gradcam_normalized};
use tdxviz::model::{load_checkpoint, save_checkpoint};
use tdxviz::render::{render_overlay, tile_horizontal, write_overlays, OverlayMode};
use tdxviz::saliency::saliency;
use tdxviz::sweep::{run_sweep, SweepSpec};
use tdxviz::video::{generate_synthetic, load_dataset, load_sequence, preprocess, write_dataset, Dataset};
use tdxviz::{build_model, DatasetSpec, Error, Method, ModelConfig, Result, TrainOptions};

use crate::manifest::{io_error, RunManifest};
use crate::{ExplainArgs, GenDataArgs, ModelArgs, OptimArgs, SweepArgs, TrainArgs};

pub const HEATMAP_FILE: &str = "heatmap.tdxh";
pub const CONTOURS_FILE: &str = "contours.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const OVERLAY_DIR: &str = "overlays";
pub const PROBE_DIR: &str = "probe";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let spec = DatasetSpec {
        num_sequences: args.per_class,
        frames: args.frames,
        height: args.size.0,
        width: args.size.1,
        channels: args.channels,
        classes: args.classes.clone(),
        seed: args.seed,
    };
    let sequences = generate_synthetic(&spec)?;
    write_dataset(&args.out, &spec, &sequences)?;
    eprintln!("wrote {} sequences to {}", sequences.len(), args.out.display());
    RunManifest::new("gen-data", &spec, args.seed, vec![], &args.out).finish(started)
}

/// Resizes every sequence to `input_size` when given and returns the frame
/// size and channel count the model should expect.
fn prepare(dataset: &mut Dataset, input_size: Option<(usize, usize)>) -> Result<((usize, usize), usize)> {
    if let Some(hw) = input_size {
        for seq in dataset.sequences.iter_mut() {
            *seq = preprocess(seq, hw)?;
        }
    }
    let first = &dataset.sequences[0];
    Ok(((first.height(), first.width()), first.channels()))
}

fn model_config(args: &ModelArgs, classes: &[String], input_hw: (usize, usize), channels: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        backbone: args.backbone,
        gru_units: args.gru_units,
        gru_dropout: args.dropout,
        mlp_blocks: args.blocks,
        mlp_dropout: args.mlp_dropout,
        dense_width: args.dense_width,
        classes: classes.to_vec(),
        input_hw,
        channels,
        seed,
    }
}

fn train_options(args: &OptimArgs) -> TrainOptions {
    TrainOptions {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut dataset = load_dataset(&args.data)?;
    let (input_hw, channels) = prepare(&mut dataset, args.model.input_size)?;
    let config = model_config(&args.model, &dataset.classes, input_hw, channels, args.seed);
    let opts = train_options(&args.optim);
    let model = tdxviz::model::train(build_model(&config)?, &dataset, &opts)?;
    if let Some(last) = model.training_log.last() {
        eprintln!(
            "epoch {}: loss {:.4}, train accuracy {:.3}",
            last.epoch, last.loss, last.accuracy
        );
    }
    save_checkpoint(&model, &args.out)?;
    let resolved = json!({ "model": config, "train": opts });
    RunManifest::new("train", resolved, args.seed, vec![args.data.clone()], &args.out).finish(started)
}

#[derive(Serialize)]
struct Prediction<'a> {
    classes: &'a [String],
    probabilities: &'a [f64],
    predicted: &'a str,
    explained: &'a str,
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let started = Instant::now();
    validate_levels(&args.levels)?;
    let model = load_checkpoint(&args.model)?;
    let seq = preprocess(&load_sequence(&args.input)?, model.config.input_hw)?;
    let scores = model.forward(&seq)?;
    let class_index = match args.class.as_str() {
        "predicted" => scores.argmax(),
        name => model.config.class_index(name)?,
    };
    create_dir(&args.out)?;
    let report = Prediction {
        classes: &scores.classes,
        probabilities: &scores.probabilities,
        predicted: scores.predicted_label(),
        explained: &model.config.classes[class_index],
    };
    let report_json = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&args.out.join(PREDICTION_FILE), report_json)?;
    eprintln!("predicted {}", scores.predicted_label());

    if !args.no_render {
        let stack = match args.method {
            Method::Saliency => saliency(&model, &seq, class_index, args.normalization)?,
            Method::Gradcam => {
                let bundle = capture_bundle(&model, &seq, class_index)?;
                gradcam_normalized(&bundle, (seq.height(), seq.width()), args.normalization)?
            }
        };
        stack.save(args.out.join(HEATMAP_FILE))?;
        let contours = extract_contours(&stack, &args.levels)?;
        write_file(&args.out.join(CONTOURS_FILE), contours.to_json())?;
        for &mode in args.render.modes() {
            let images = render_overlay(&seq, &stack, mode, Some(&contours))?;
            write_overlays(args.out.join(OVERLAY_DIR), mode, &images)?;
        }
    }

    let resolved = json!({
        "method": args.method,
        "render": args.render.modes().iter().map(|m| m.name()).collect::<Vec<_>>(),
        "levels": args.levels,
        "class": report.explained,
        "normalization": args.normalization,
        "no_render": args.no_render,
        "model": model.config,
    });
    RunManifest::new(
        "explain",
        resolved,
        model.config.seed,
        vec![args.model.clone(), args.input.clone()],
        &args.out,
    )
    .finish(started)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let started = Instant::now();
    let mut dataset = load_dataset(&args.data)?;
    let (input_hw, channels) = prepare(&mut dataset, args.model.input_size)?;
    let base = model_config(&args.model, &dataset.classes, input_hw, channels, args.seed);
    let mut spec = SweepSpec::new(args.axis, base);
    if let Some(values) = &args.values {
        spec.values = values.clone();
    }
    spec.train = train_options(&args.optim);
    spec.seed = args.seed;
    spec.train_fraction = args.train_fraction;

    let report = run_sweep(&spec, &dataset)?;
    create_dir(&args.out)?;
    write_file(&args.out.join(format!("{}.csv", args.axis.name())), report.to_csv())?;
    for p in &report.points {
        if let Err(reason) = &p.outcome {
            eprintln!("{} = {}: {reason}", args.axis.name(), p.value);
        }
    }

    if let Some(probe) = &report.probe {
        let dir = args.out.join(PROBE_DIR);
        create_dir(&dir)?;
        for p in &report.points {
            let Some(stack) = &p.probe else { continue };
            let images = render_overlay(probe, stack, OverlayMode::Heat, None)?;
            let path = dir.join(format!("{}_{}.png", args.axis.name(), p.value));
            tile_horizontal(&images)
                .save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
    }

    RunManifest::new("sweep", &spec, args.seed, vec![args.data.clone()], &args.out).finish(started)
}

