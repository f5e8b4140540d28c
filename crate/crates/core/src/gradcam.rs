//! Class-activation maps at the output of the time-distributed backbone.
//!
//! Only the backbone's final feature map is inspectable: the wrapper yields
//! one output per frame and the gradients captured there have the same
//! shape, so each frame's map pairs its own activations with its own
//! gradients. Channel weights are the spatial mean of the gradients for that
//! frame; the map is the ReLU of the weighted channel sum.

use ndarray::{s, Array3, Array4};

use crate::error::{Error, Result};
use crate::heatmap::{normalize, HeatmapMeta, HeatmapStack, Method, Normalization};
use crate::model::TrainedModel;
use crate::resize;
use crate::video::VideoSequence;

/// Backbone activations (`T x H_a x W_a x K`) and the class-score gradients
/// at the same tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBundle {
    pub activations: Array4<f64>,
    pub gradients: Array4<f64>,
    pub class_index: usize,
    pub model_id: String,
}

impl ActivationBundle {
    pub fn new(activations: Array4<f64>, gradients: Array4<f64>) -> Result<Self> {
        if activations.dim() != gradients.dim() {
            return Err(Error::Shape(format!(
                "activations {:?} and gradients {:?} differ",
                activations.dim(),
                gradients.dim()
            )));
        }
        Ok(Self {
            activations,
            gradients,
            class_index: 0,
            model_id: String::new(),
        })
    }
}

/// Records backbone activations on the forward pass and the gradient of the
/// `class_index` logit at those activations on the backward pass.
pub fn capture_bundle(model: &TrainedModel, seq: &VideoSequence, class_index: usize) -> Result<ActivationBundle> {
    let (ha, wa, _) = model.backbone_output_shape();
    if ha * wa <= 1 {
        return Err(Error::UnsupportedArchitecture(format!(
            "backbone output is {ha}x{wa}; class-activation maps need a spatial feature map"
        )));
    }
    let (activations, gradients) = model.feature_gradient(seq.to_f64().view(), class_index)?;
    Ok(ActivationBundle {
        activations,
        gradients,
        class_index,
        model_id: model.fingerprint(),
    })
}

/// Per-frame weighted channel sum followed by ReLU, at feature-map resolution.
pub fn raw_gradcam(bundle: &ActivationBundle) -> Array3<f64> {
    let (t, ha, wa, k) = bundle.activations.dim();
    let mut out = Array3::zeros((t, ha, wa));
    let area = (ha * wa) as f64;
    for ti in 0..t {
        let grads = bundle.gradients.slice(s![ti, .., .., ..]);
        let acts = bundle.activations.slice(s![ti, .., .., ..]);
        let weights: Vec<f64> = (0..k).map(|c| grads.slice(s![.., .., c]).sum() / area).collect();
        for y in 0..ha {
            for x in 0..wa {
                let v: f64 = (0..k).map(|c| weights[c] * acts[[y, x, c]]).sum();
                out[[ti, y, x]] = v.max(0.0);
            }
        }
    }
    out
}

/// Class-activation maps upsampled bilinearly to `target_hw` and normalized
/// per frame.
pub fn gradcam(bundle: &ActivationBundle, target_hw: (usize, usize)) -> Result<HeatmapStack> {
    gradcam_normalized(bundle, target_hw, Normalization::PerFrame)
}

/// [`gradcam`] with a choice of normalization scope.
pub fn gradcam_normalized(
    bundle: &ActivationBundle,
    target_hw: (usize, usize),
    normalization: Normalization,
) -> Result<HeatmapStack> {
    let (t, ha, wa, _) = bundle.activations.dim();
    if bundle.gradients.dim() != bundle.activations.dim() {
        return Err(Error::Shape("activation and gradient shapes differ".into()));
    }
    let (th, tw) = target_hw;
    if th < ha || tw < wa {
        return Err(Error::Argument(format!(
            "target {th}x{tw} is smaller than the {ha}x{wa} feature map"
        )));
    }
    let raw = raw_gradcam(bundle);
    let mut up = Array3::zeros((t, th, tw));
    for ti in 0..t {
        up.slice_mut(s![ti, .., ..])
            .assign(&resize::bilinear(raw.slice(s![ti, .., ..]), th, tw));
    }
    Ok(HeatmapStack {
        maps: normalize(&up, normalization),
        meta: HeatmapMeta {
            method: Method::Gradcam,
            class_index: bundle.class_index,
            normalization,
            model_id: bundle.model_id.clone(),
        },
    })
}
