//! The full sequence classifier: time-distributed backbone, GRU, MLP blocks
//! and a softmax output, with one forward/backward path shared by training
//! and the explainers.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView4};
use rand::Rng;

use super::backbone::{Backbone, BackboneCache, FrameModel};
use super::layers::{softmax, Dense, Gru};

/// All learned layers of a model. A zeroed copy doubles as a gradient
/// accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub backbone: Backbone,
    pub gru: Gru,
    pub blocks: Vec<Dense>,
    pub output: Dense,
}

/// Named view of one parameter tensor.
pub struct TensorRef<'a> {
    /// Layer name, e.g. `backbone.block1_conv1`.
    pub layer: String,
    /// Tensor name within the layer, e.g. `kernel`.
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub layer: String,
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Dropout masks drawn for one training example; `None` in inference mode.
pub(crate) struct DropoutMasks {
    pub gru_input: Array1<f64>,
    pub blocks: Vec<Array1<f64>>,
}

fn inverted_dropout<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Array1<f64> {
    if rate <= 0.0 {
        return Array1::ones(len);
    }
    let keep = 1.0 - rate;
    Array1::from_shape_fn(len, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

impl DropoutMasks {
    pub fn draw<R: Rng>(net: &Network, gru_rate: f64, mlp_rate: f64, rng: &mut R) -> Self {
        let features = net.gru.kernel.nrows();
        Self {
            gru_input: inverted_dropout(features, gru_rate, rng),
            blocks: net
                .blocks
                .iter()
                .map(|b| inverted_dropout(b.bias.len(), mlp_rate, rng))
                .collect(),
        }
    }
}

pub(crate) struct Trace {
    backbone: Option<BackboneCache>,
    pub feature_map: Array4<f64>,
    gru_input: Array2<f64>,
    gru: super::layers::GruCache,
    /// input of every MLP block, then input of the output layer
    dense_inputs: Vec<Array1<f64>>,
    /// post-ReLU (pre-dropout) activations of every block
    block_relu: Vec<Array1<f64>>,
    pub logits: Array1<f64>,
}

/// What a backward pass should produce.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Needs {
    pub params: bool,
    pub input: bool,
}

pub(crate) struct Backward {
    pub params: Option<Network>,
    pub input: Option<Array4<f64>>,
    pub feature_map: Array4<f64>,
}

impl Network {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn r<'a, D: ndarray::Dimension>(
            layer: &str,
            name: &'static str,
            a: &'a ndarray::Array<f64, D>,
        ) -> TensorRef<'a> {
            TensorRef {
                layer: layer.to_string(),
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("parameters are contiguous"),
            }
        }
        let mut out = Vec::new();
        for (si, stage) in self.backbone.stages.iter().enumerate() {
            for (ci, conv) in stage.iter().enumerate() {
                let layer = format!("backbone.block{}_conv{}", si + 1, ci + 1);
                out.push(r(&layer, "kernel", &conv.weight));
                out.push(r(&layer, "bias", &conv.bias));
            }
        }
        out.push(r("gru", "kernel", &self.gru.kernel));
        out.push(r("gru", "recurrent_kernel", &self.gru.recurrent_kernel));
        out.push(r("gru", "input_bias", &self.gru.input_bias));
        out.push(r("gru", "recurrent_bias", &self.gru.recurrent_bias));
        for (i, d) in self.blocks.iter().enumerate() {
            let layer = format!("mlp.dense{}", i + 1);
            out.push(r(&layer, "kernel", &d.weight));
            out.push(r(&layer, "bias", &d.bias));
        }
        out.push(r("output", "kernel", &self.output.weight));
        out.push(r("output", "bias", &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn m<'a, D: ndarray::Dimension>(
            layer: &str,
            name: &'static str,
            a: &'a mut ndarray::Array<f64, D>,
        ) -> TensorMut<'a> {
            TensorMut {
                layer: layer.to_string(),
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice_mut().expect("parameters are contiguous"),
            }
        }
        let mut out = Vec::new();
        for (si, stage) in self.backbone.stages.iter_mut().enumerate() {
            for (ci, conv) in stage.iter_mut().enumerate() {
                let layer = format!("backbone.block{}_conv{}", si + 1, ci + 1);
                out.push(m(&layer, "kernel", &mut conv.weight));
                out.push(m(&layer, "bias", &mut conv.bias));
            }
        }
        out.push(m("gru", "kernel", &mut self.gru.kernel));
        out.push(m("gru", "recurrent_kernel", &mut self.gru.recurrent_kernel));
        out.push(m("gru", "input_bias", &mut self.gru.input_bias));
        out.push(m("gru", "recurrent_bias", &mut self.gru.recurrent_bias));
        for (i, d) in self.blocks.iter_mut().enumerate() {
            let layer = format!("mlp.dense{}", i + 1);
            out.push(m(&layer, "kernel", &mut d.weight));
            out.push(m(&layer, "bias", &mut d.bias));
        }
        out.push(m("output", "kernel", &mut self.output.weight));
        out.push(m("output", "bias", &mut self.output.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &Network) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn forward(&self, frames: ArrayView4<f64>, dropout: Option<&DropoutMasks>) -> Trace {
        let (feature_map, backbone) = self.backbone.forward_cached(frames);
        self.forward_from_features(feature_map, Some(backbone), dropout)
    }

    fn forward_from_features(
        &self,
        feature_map: Array4<f64>,
        backbone: Option<BackboneCache>,
        dropout: Option<&DropoutMasks>,
    ) -> Trace {
        let t = feature_map.dim().0;
        let features = feature_map
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, self.gru.kernel.nrows()))
            .expect("flatten feature map");
        let gru_input = match dropout {
            Some(m) => features * &m.gru_input,
            None => features,
        };
        let (mut a, gru) = self.gru.forward(gru_input.view());
        let mut dense_inputs = Vec::with_capacity(self.blocks.len() + 1);
        let mut block_relu = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let y = block.forward(a.view()).mapv(|v| v.max(0.0));
            dense_inputs.push(a);
            a = match dropout {
                Some(m) => &y * &m.blocks[i],
                None => y.clone(),
            };
            block_relu.push(y);
        }
        let logits = self.output.forward(a.view());
        dense_inputs.push(a);
        Trace {
            backbone,
            feature_map,
            gru_input,
            gru,
            dense_inputs,
            block_relu,
            logits,
        }
    }

    /// Logits computed from a given backbone feature map (`T x H_a x W_a x K`).
    pub(crate) fn logits_from_features(&self, feature_map: Array4<f64>) -> Array1<f64> {
        self.forward_from_features(feature_map, None, None).logits
    }

    pub(crate) fn probabilities(trace: &Trace) -> Array1<f64> {
        softmax(trace.logits.view())
    }

    /// Backpropagates `d_logits` through the whole network.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        d_logits: ArrayView1<f64>,
        dropout: Option<&DropoutMasks>,
        needs: Needs,
    ) -> Backward {
        let mut grad = needs.params.then(|| self.zeros_like());
        let nb = self.blocks.len();
        let mut d = self.output.backward(
            trace.dense_inputs[nb].view(),
            d_logits,
            grad.as_mut().map(|g| &mut g.output),
        );
        for i in (0..nb).rev() {
            if let Some(m) = dropout {
                d *= &m.blocks[i];
            }
            let relu = &trace.block_relu[i];
            d.zip_mut_with(relu, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
            d = self.blocks[i].backward(
                trace.dense_inputs[i].view(),
                d.view(),
                grad.as_mut().map(|g| &mut g.blocks[i]),
            );
        }
        let mut d_features = self.gru.backward(&trace.gru, d.view(), grad.as_mut().map(|g| &mut g.gru));
        debug_assert_eq!(d_features.dim(), trace.gru_input.dim());
        if let Some(m) = dropout {
            d_features *= &m.gru_input;
        }
        let d_map = d_features
            .into_shape_with_order(trace.feature_map.dim())
            .expect("unflatten feature gradient");
        let input = match (&trace.backbone, needs.params || needs.input) {
            (Some(cache), true) => self.backbone.backward(
                cache,
                d_map.clone(),
                grad.as_mut().map(|g| &mut g.backbone),
                needs.input,
            ),
            _ => None,
        };
        Backward {
            params: grad,
            input: if needs.input { input } else { None },
            feature_map: d_map,
        }
    }

    pub fn feature_shape(&self) -> (usize, usize, usize) {
        self.backbone.output_shape()
    }
}
