//! Explainability toolkit for time-distributed convolutional-recurrent video
//! classifiers.
//!
//! The crate covers the whole loop: a deterministic synthetic video dataset
//! ([`video`]), a CNN + GRU + MLP classifier whose convolutional backbone is
//! wrapped in a time-distributed layer ([`model`]), per-frame saliency maps
//! ([`saliency`]) and class-activation maps ([`gradcam`]) computed through
//! that wrapper, contour overlays with nesting and intensity annotations
//! ([`contour`], [`render`]), and the metrics and hyperparameter sweeps used
//! to tune the model ([`metrics`], [`sweep`]).

pub mod contour;
pub mod error;
pub mod gradcam;
pub mod heatmap;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod render;
pub(crate) mod resize;
pub mod saliency;
pub mod sweep;
pub mod video;

pub use error::{Error, Result};
pub use heatmap::{HeatmapStack, Method, Normalization};
pub use model::{build_model, BackboneKind, ClassScores, ModelConfig, TrainOptions, TrainedModel};
pub use video::{DatasetSpec, VideoSequence};

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
