//! Convolutional backbones and the time-distributed wrapper that applies
//! them frame by frame.

use ndarray::{s, Array4, Array5, ArrayView3, ArrayView4, ArrayView5, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{max_pool2, max_pool2_backward, relu4, relu4_backward, Conv2d};
use crate::error::{Error, Result};

/// Which convolutional feature extractor sits inside the time-distributed
/// wrapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneKind {
    /// Two stages of 8 and 16 channels, for tests and quick runs.
    #[serde(rename = "tiny-cnn")]
    TinyCnn,
    /// The VGG19 layout: five stages of 64, 128, 256, 512, 512 channels with
    /// 2, 2, 4, 4, 4 convolutions each.
    #[serde(rename = "vgg19-shaped")]
    Vgg19Shaped,
}

impl BackboneKind {
    /// `(channels, convolutions)` per stage; every stage ends in a 2x2 pool.
    pub fn stages(self) -> &'static [(usize, usize)] {
        match self {
            BackboneKind::TinyCnn => &[(8, 1), (16, 1)],
            BackboneKind::Vgg19Shaped => &[(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::TinyCnn => "tiny-cnn",
            BackboneKind::Vgg19Shaped => "vgg19-shaped",
        }
    }

    /// Spatial size of the final feature map for a given input size.
    pub fn output_hw(self, input_hw: (usize, usize)) -> (usize, usize) {
        let n = self.stages().len() as u32;
        (input_hw.0 >> n, input_hw.1 >> n)
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny-cnn" => Ok(BackboneKind::TinyCnn),
            "vgg19-shaped" => Ok(BackboneKind::Vgg19Shaped),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?} (expected tiny-cnn or vgg19-shaped)"
            ))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A model applied to single frames (`H x W x C`) or to a batch of frames
/// (`N x H x W x C`).
pub trait FrameModel {
    fn input_shape(&self) -> (usize, usize, usize);
    fn output_shape(&self) -> (usize, usize, usize);
    fn apply_batch(&self, frames: ArrayView4<f64>) -> Result<Array4<f64>>;

    fn apply_frame(&self, frame: ArrayView3<f64>) -> Result<ndarray::Array3<f64>> {
        let batch = frame.insert_axis(Axis(0));
        Ok(self.apply_batch(batch)?.index_axis_move(Axis(0), 0))
    }
}

/// Applies `submodel` to every frame of a `B x T x H x W x C` batch, one frame
/// at a time, keeping batch and time order. Output is
/// `B x T x H_a x W_a x K`.
pub fn time_distributed_apply<M: FrameModel + ?Sized>(
    submodel: &M,
    batch: ArrayView5<f64>,
) -> Result<Array5<f64>> {
    let (b, t, h, w, c) = batch.dim();
    if (h, w, c) != submodel.input_shape() {
        return Err(Error::Shape(format!(
            "frames are {h}x{w}x{c}, submodel expects {:?}",
            submodel.input_shape()
        )));
    }
    let (ha, wa, k) = submodel.output_shape();
    let mut out = Array5::zeros((b, t, ha, wa, k));
    for bi in 0..b {
        for ti in 0..t {
            let y = submodel.apply_frame(batch.slice(s![bi, ti, .., .., ..]))?;
            out.slice_mut(s![bi, ti, .., .., ..]).assign(&y);
        }
    }
    Ok(out)
}

/// Dynamic-rank entry point: rejects anything that is not rank 5.
pub fn time_distributed_apply_dyn<M: FrameModel + ?Sized>(
    submodel: &M,
    batch: ndarray::ArrayViewD<f64>,
) -> Result<Array5<f64>> {
    let rank = batch.ndim();
    let batch = batch
        .into_dimensionality::<ndarray::Ix5>()
        .map_err(|_| Error::Shape(format!("expected a rank-5 B x T x H x W x C batch, got rank {rank}")))?;
    time_distributed_apply(submodel, batch)
}

/// Convolutional feature extractor: stages of (3x3 conv + ReLU) repeated,
/// each closed by 2x2 max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub input_hw: (usize, usize),
    pub channels: usize,
    /// Convolutions grouped by stage.
    pub stages: Vec<Vec<Conv2d>>,
}

pub(crate) struct BackboneCache {
    input_dim: (usize, usize, usize, usize),
    /// per convolution: im2col matrix, its input shape, ReLU output
    convs: Vec<Vec<(ndarray::Array2<f64>, (usize, usize, usize, usize), Array4<f64>)>>,
    /// per stage: pool argmax indices
    pools: Vec<Vec<usize>>,
}

impl Backbone {
    pub fn zeros(kind: BackboneKind, input_hw: (usize, usize), channels: usize) -> Self {
        let mut c_in = channels;
        let stages = kind
            .stages()
            .iter()
            .map(|&(c_out, n)| {
                (0..n)
                    .map(|_| {
                        let conv = Conv2d::zeros(c_in, c_out);
                        c_in = c_out;
                        conv
                    })
                    .collect()
            })
            .collect();
        Self {
            kind,
            input_hw,
            channels,
            stages,
        }
    }

    pub(crate) fn forward_cached(&self, x: ArrayView4<f64>) -> (Array4<f64>, BackboneCache) {
        let mut cache = BackboneCache {
            input_dim: x.dim(),
            convs: Vec::with_capacity(self.stages.len()),
            pools: Vec::with_capacity(self.stages.len()),
        };
        let mut cur = x.to_owned();
        for stage in &self.stages {
            let mut stage_cache = Vec::with_capacity(stage.len());
            for conv in stage {
                let in_dim = cur.dim();
                let (mut y, cols) = conv.forward(cur.view());
                relu4(&mut y);
                stage_cache.push((cols, in_dim, y.clone()));
                cur = y;
            }
            let (pooled, idx) = max_pool2(cur.view());
            cache.convs.push(stage_cache);
            cache.pools.push(idx);
            cur = pooled;
        }
        (cur, cache)
    }

    /// Backpropagates `d_out` (gradient at the final feature map). Parameter
    /// gradients are accumulated into `grad`; the input gradient is returned
    /// when requested.
    pub(crate) fn backward(
        &self,
        cache: &BackboneCache,
        d_out: Array4<f64>,
        mut grad: Option<&mut Backbone>,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let mut d = d_out;
        for (si, stage) in self.stages.iter().enumerate().rev() {
            let last_in = cache.convs[si].last().expect("non-empty stage").2.dim();
            d = max_pool2_backward(d.view(), &cache.pools[si], last_in);
            for (ci, conv) in stage.iter().enumerate().rev() {
                let (cols, in_dim, out) = &cache.convs[si][ci];
                relu4_backward(out, &mut d);
                let first = si == 0 && ci == 0;
                let g = grad.as_deref_mut().map(|g| &mut g.stages[si][ci]);
                match conv.backward(cols, *in_dim, d.view(), g, !first || need_input) {
                    Some(dx) => d = dx,
                    None => return None,
                }
            }
        }
        debug_assert_eq!(d.dim(), cache.input_dim);
        Some(d)
    }
}

impl FrameModel for Backbone {
    fn input_shape(&self) -> (usize, usize, usize) {
        (self.input_hw.0, self.input_hw.1, self.channels)
    }

    fn output_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.kind.output_hw(self.input_hw);
        let k = self.kind.stages().last().map(|s| s.0).unwrap_or(self.channels);
        (h, w, k)
    }

    fn apply_batch(&self, frames: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (_, h, w, c) = frames.dim();
        if (h, w, c) != self.input_shape() {
            return Err(Error::Shape(format!(
                "frames are {h}x{w}x{c}, backbone expects {:?}",
                self.input_shape()
            )));
        }
        Ok(self.forward_cached(frames).0)
    }
}
