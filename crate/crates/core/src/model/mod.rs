//! Time-distributed CNN + GRU + MLP video classifier.
//!
//! ```text
//! frames (T x H x W x C)
//!   -> time_distributed(backbone)      T x H_a x W_a x K
//!   -> flatten per frame               T x (H_a * W_a * K)
//!   -> GRU(gru_units, input dropout)   gru_units
//!   -> mlp_blocks x [dense(dense_width) + ReLU + dropout(mlp_dropout)]
//!   -> dense(classes) -> softmax
//! ```
//!
//! Everything is computed in `f64`; parameters are kept representable in
//! `f32` so checkpoints round-trip exactly.

mod backbone;
mod checkpoint;
pub mod layers;
mod network;
mod train;

use ndarray::{Array1, Array4, ArrayView4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{time_distributed_apply, time_distributed_apply_dyn, Backbone, BackboneKind, FrameModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, CONFIG_FILE, INDEX_FILE};
pub use network::{Network, TensorMut, TensorRef};
pub use train::{evaluate, predict, train, EpochLog, TrainOptions};

use crate::error::{Error, Result};
use crate::video::VideoSequence;
use network::{Needs, Trace};

/// Architecture and hyperparameters of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub gru_units: usize,
    pub gru_dropout: f64,
    pub mlp_blocks: usize,
    pub mlp_dropout: f64,
    pub dense_width: usize,
    pub classes: Vec<String>,
    pub input_hw: (usize, usize),
    pub channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::TinyCnn,
            gru_units: 1024,
            gru_dropout: 0.5,
            mlp_blocks: 3,
            mlp_dropout: 0.5,
            dense_width: 256,
            classes: vec!["normal".into(), "fight".into(), "gunshot".into()],
            input_hw: (64, 64),
            channels: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gru_units", self.gru_units),
            ("mlp_blocks", self.mlp_blocks),
            ("dense_width", self.dense_width),
            ("channels", self.channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("gru_dropout", self.gru_dropout), ("mlp_dropout", self.mlp_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let (ha, wa) = self.backbone.output_hw(self.input_hw);
        if ha == 0 || wa == 0 {
            return Err(Error::Config(format!(
                "input {}x{} is too small for the {} backbone",
                self.input_hw.0, self.input_hw.1, self.backbone
            )));
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Argument(format!("unknown class {name:?}")))
    }
}

/// Per-class probabilities for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    /// Index of the most probable class (first one on ties).
    pub fn argmax(&self) -> usize {
        self.probabilities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    pub fn predicted_label(&self) -> &str {
        &self.classes[self.argmax()]
    }
}

/// A built (and possibly trained) model. Immutable once trained; inference
/// always runs with dropout disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub network: Network,
    pub training_log: Vec<EpochLog>,
}

fn uniform_fill(data: &mut [f64], limit: f64, rng: &mut ChaCha8Rng) {
    for v in data.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
}

/// Builds an untrained model. Initialization is deterministic in
/// `config.seed`: He-uniform for ReLU layers, Glorot-uniform for the GRU and
/// output layer, zero biases.
pub fn build_model(config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    let backbone = Backbone::zeros(config.backbone, config.input_hw, config.channels);
    let (ha, wa, k) = backbone.output_shape();
    let features = ha * wa * k;
    let mut net = Network {
        backbone,
        gru: layers::Gru::zeros(features, config.gru_units),
        blocks: (0..config.mlp_blocks)
            .map(|i| {
                let inputs = if i == 0 { config.gru_units } else { config.dense_width };
                layers::Dense::zeros(inputs, config.dense_width)
            })
            .collect(),
        output: layers::Dense::zeros(config.dense_width, config.classes.len()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for t in net.tensors_mut() {
        if t.name.contains("bias") {
            continue;
        }
        let limit = match t.layer.as_str() {
            l if l.starts_with("backbone.") => {
                let fan_in = t.shape[0] * t.shape[1] * t.shape[2];
                (6.0 / fan_in as f64).sqrt()
            }
            l if l.starts_with("mlp.") => (6.0 / t.shape[0] as f64).sqrt(),
            _ => (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt(),
        };
        uniform_fill(t.data, limit, &mut rng);
    }
    net.round_to_f32();
    Ok(TrainedModel {
        config: config.clone(),
        network: net,
        training_log: Vec::new(),
    })
}

impl TrainedModel {
    /// Shape `(H_a, W_a, K)` of the backbone's final feature map.
    pub fn backbone_output_shape(&self) -> (usize, usize, usize) {
        self.network.backbone.output_shape()
    }

    pub fn backbone(&self) -> &Backbone {
        &self.network.backbone
    }

    fn check_frames(&self, frames: &ArrayView4<f64>) -> Result<()> {
        let (t, h, w, c) = frames.dim();
        let (eh, ew) = self.config.input_hw;
        if t == 0 {
            return Err(Error::EmptyInput("sequence has no frames".into()));
        }
        if (h, w, c) != (eh, ew, self.config.channels) {
            return Err(Error::Shape(format!(
                "frames are {h}x{w}x{c}, model expects {eh}x{ew}x{}",
                self.config.channels
            )));
        }
        Ok(())
    }

    fn check_class(&self, class_index: usize) -> Result<()> {
        if class_index >= self.config.classes.len() {
            return Err(Error::Argument(format!(
                "class index {class_index} out of range for {} classes",
                self.config.classes.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, frames: ArrayView4<f64>) -> Result<Trace> {
        self.check_frames(&frames)?;
        Ok(self.network.forward(frames, None))
    }

    /// Pre-softmax class scores for a `T x H x W x C` frame array.
    pub fn logits(&self, frames: ArrayView4<f64>) -> Result<Array1<f64>> {
        Ok(self.trace(frames)?.logits)
    }

    /// Pre-softmax class scores computed from a backbone feature map
    /// (`T x H_a x W_a x K`), skipping the backbone.
    pub fn logits_from_features(&self, feature_map: ArrayView4<f64>) -> Result<Array1<f64>> {
        let (_, ha, wa, k) = feature_map.dim();
        if (ha, wa, k) != self.backbone_output_shape() {
            return Err(Error::Shape(format!(
                "feature map is {ha}x{wa}x{k}, expected {:?}",
                self.backbone_output_shape()
            )));
        }
        Ok(self.network.logits_from_features(feature_map.to_owned()))
    }

    /// Class probabilities for a `T x H x W x C` frame array.
    pub fn probabilities(&self, frames: ArrayView4<f64>) -> Result<Array1<f64>> {
        let trace = self.trace(frames)?;
        Ok(Network::probabilities(&trace))
    }

    /// Runs inference on a preprocessed sequence.
    pub fn forward(&self, seq: &VideoSequence) -> Result<ClassScores> {
        let p = self.probabilities(seq.to_f64().view())?;
        Ok(ClassScores {
            classes: self.config.classes.clone(),
            probabilities: p.to_vec(),
        })
    }

    /// Gradient of the `class_index` logit with respect to every input pixel,
    /// in one backward pass through GRU and time-distributed backbone.
    pub fn input_gradient(&self, frames: ArrayView4<f64>, class_index: usize) -> Result<Array4<f64>> {
        self.check_class(class_index)?;
        let trace = self.trace(frames)?;
        let d = self.one_hot(class_index);
        self.network
            .backward(&trace, d.view(), None, Needs { params: false, input: true })
            .input
            .ok_or_else(|| Error::Internal("backward pass produced no input gradient".into()))
    }

    /// Backbone feature map and the gradient of the `class_index` logit with
    /// respect to it.
    pub fn feature_gradient(
        &self,
        frames: ArrayView4<f64>,
        class_index: usize,
    ) -> Result<(Array4<f64>, Array4<f64>)> {
        self.check_class(class_index)?;
        let trace = self.trace(frames)?;
        let d = self.one_hot(class_index);
        let back = self.network.backward(&trace, d.view(), None, Needs::default());
        Ok((trace.feature_map, back.feature_map))
    }

    fn one_hot(&self, class_index: usize) -> Array1<f64> {
        let mut d = Array1::zeros(self.config.classes.len());
        d[class_index] = 1.0;
        d
    }

    /// Short content hash of configuration and parameters.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).unwrap_or_default());
        for t in self.network.tensors() {
            for v in t.data {
                h.update((*v as f32).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}
