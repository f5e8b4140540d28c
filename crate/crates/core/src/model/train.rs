use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{DropoutMasks, Needs, Network};
use super::TrainedModel;
use crate::error::{Error, Result};
use crate::video::Dataset;

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.02,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training passes (dropout active).
    pub loss: f64,
    /// Fraction of training sequences classified correctly during the epoch.
    pub accuracy: f64,
}

// Separate ChaCha streams keep shuffling and dropout independent of each other.
const SHUFFLE_STREAM: u64 = 1 << 40;
const DROPOUT_STREAM: u64 = 2 << 40;

/// Trains `model` on `dataset` and returns it with `training_log` extended.
///
/// Minibatch examples are processed in parallel, but gradients are summed in
/// a fixed order, so the result depends only on the inputs and
/// `model.config.seed`, never on thread count.
pub fn train(mut model: TrainedModel, dataset: &Dataset, opts: &TrainOptions) -> Result<TrainedModel> {
    if dataset.sequences.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    if !opts.learning_rate.is_finite() || opts.learning_rate < 0.0 {
        return Err(Error::Argument(format!("invalid learning rate {}", opts.learning_rate)));
    }
    let targets = dataset
        .sequences
        .iter()
        .map(|s| model.config.class_index(s.label()))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<_> = dataset.sequences.iter().map(|s| s.to_f64()).collect();
    let first = inputs[0].dim();
    if let Some(bad) = inputs.iter().find(|x| x.dim() != first) {
        return Err(Error::Shape(format!(
            "all sequences must share one shape; found {:?} and {:?}",
            first,
            bad.dim()
        )));
    }
    model.check_frames(&inputs[0].view())?;

    let seed = model.config.seed;
    let (gru_rate, mlp_rate) = (model.config.gru_dropout, model.config.mlp_dropout);
    let start_epoch = model.training_log.len();
    for e in 0..opts.epochs {
        let epoch = start_epoch + e + 1;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            let net = &model.network;
            let results: Vec<(f64, bool, Network)> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(DROPOUT_STREAM + ((epoch as u64) << 20) + (b * opts.batch_size + pos) as u64);
                    let masks = DropoutMasks::draw(net, gru_rate, mlp_rate, &mut rng);
                    let trace = net.forward(inputs[idx].view(), Some(&masks));
                    let probs = Network::probabilities(&trace);
                    let target = targets[idx];
                    let loss = -probs[target].max(1e-300).ln();
                    let predicted = probs
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |m, (i, &p)| if p > m.1 { (i, p) } else { m })
                        .0;
                    let mut d_logits: Array1<f64> = probs;
                    d_logits[target] -= 1.0;
                    let back = net.backward(&trace, d_logits.view(), Some(&masks), Needs { params: true, input: false });
                    (loss, predicted == target, back.params.expect("parameter gradients requested"))
                })
                .collect();

            let mut grad = model.network.zeros_like();
            for (loss, ok, g) in &results {
                loss_sum += loss;
                correct += *ok as usize;
                grad.add_scaled(1.0, g);
            }
            if !loss_sum.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "loss is not finite".into(),
                });
            }
            model.network.add_scaled(-opts.learning_rate / batch.len() as f64, &grad);
            model.network.round_to_f32();
            if model.network.tensors().iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        model.training_log.push(EpochLog {
            epoch,
            loss: loss_sum / inputs.len() as f64,
            accuracy: correct as f64 / inputs.len() as f64,
        });
    }
    Ok(model)
}

/// Predicted class index for every sequence (inference mode, in parallel).
pub fn predict(model: &TrainedModel, dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .sequences
        .par_iter()
        .map(|s| model.forward(s).map(|scores| scores.argmax()))
        .collect()
}

/// Fraction of sequences whose predicted class matches the label.
pub fn evaluate(model: &TrainedModel, dataset: &Dataset) -> Result<f64> {
    if dataset.sequences.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let predictions = predict(model, dataset)?;
    let mut correct = 0;
    for (p, s) in predictions.iter().zip(&dataset.sequences) {
        correct += (*p == model.config.class_index(s.label())?) as usize;
    }
    Ok(correct as f64 / predictions.len() as f64)
}
