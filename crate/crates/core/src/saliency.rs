//! Per-frame saliency maps through the time-distributed model.
//!
//! The class logit is differentiated with respect to the whole input
//! sequence in a single backward pass, so each frame's gradient carries the
//! GRU's view of that frame's place in the sequence. The raw map at a pixel
//! is the largest absolute gradient over its channels.

use ndarray::{Array3, Axis};

use crate::error::Result;
use crate::heatmap::{normalize, HeatmapMeta, HeatmapStack, Method, Normalization};
use crate::model::TrainedModel;
use crate::video::VideoSequence;

/// Unnormalized saliency: `T x H x W`, max-abs over channels.
pub fn raw_saliency(model: &TrainedModel, frames: ndarray::ArrayView4<f64>, class_index: usize) -> Result<Array3<f64>> {
    let grad = model.input_gradient(frames, class_index)?;
    Ok(grad.map_axis(Axis(3), |g| g.fold(0.0f64, |m, &v| m.max(v.abs()))))
}

pub fn saliency(
    model: &TrainedModel,
    seq: &VideoSequence,
    class_index: usize,
    normalization: Normalization,
) -> Result<HeatmapStack> {
    let raw = raw_saliency(model, seq.to_f64().view(), class_index)?;
    Ok(HeatmapStack {
        maps: normalize(&raw, normalization),
        meta: HeatmapMeta {
            method: Method::Saliency,
            class_index,
            normalization,
            model_id: model.fingerprint(),
        },
    })
}
