//! Per-frame attribution maps and their on-disk format.
//!
//! A `.tdxh` file is the magic `TDXH`, then `T`, `H`, `W` as little-endian
//! `u32`, then `T * H * W` little-endian `f32` values, frame-major and
//! row-major within a frame. Metadata goes into a `meta.json` sidecar.

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TDXH";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Saliency,
    Gradcam,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(Method::Saliency),
            "gradcam" => Ok(Method::Gradcam),
            other => Err(Error::Argument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    /// Each frame's maximum maps to 1.
    #[default]
    #[serde(rename = "per-frame")]
    PerFrame,
    /// The maximum over the whole sequence maps to 1.
    #[serde(rename = "per-sequence")]
    PerSequence,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-frame" => Ok(Normalization::PerFrame),
            "per-sequence" => Ok(Normalization::PerSequence),
            other => Err(Error::Argument(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Metadata written to `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub method: Method,
    pub class_index: usize,
    pub normalization: Normalization,
    pub model_id: String,
}

/// `T` attribution maps with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub maps: Array3<f32>,
    pub meta: HeatmapMeta,
}

/// Scales non-negative raw maps into `[0, 1]`. All-zero scopes stay zero.
pub fn normalize(raw: &Array3<f64>, normalization: Normalization) -> Array3<f32> {
    let mut out = raw.clone();
    match normalization {
        Normalization::PerFrame => {
            for mut frame in out.axis_iter_mut(Axis(0)) {
                let max = frame.fold(0.0f64, |m, &v| m.max(v));
                if max > 0.0 {
                    frame.mapv_inplace(|v| v / max);
                }
            }
        }
        Normalization::PerSequence => {
            let max = out.fold(0.0f64, |m, &v| m.max(v));
            if max > 0.0 {
                out.mapv_inplace(|v| v / max);
            }
        }
    }
    out.mapv(|v| v.clamp(0.0, 1.0) as f32)
}

impl HeatmapStack {
    pub fn len(&self) -> usize {
        self.maps.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.maps.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.maps.len_of(Axis(2))
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f32> {
        self.maps.index_axis(Axis(0), t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (t, h, w) = self.maps.dim();
        let mut out = Vec::with_capacity(16 + 4 * t * h * w);
        out.extend_from_slice(MAGIC);
        for d in [t, h, w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.maps.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a `.tdxh` payload; metadata must be supplied separately.
    pub fn maps_from_bytes(bytes: &[u8]) -> Result<Array3<f32>> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a TDXH heatmap file".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (t, h, w) = (dim(0), dim(1), dim(2));
        let body = &bytes[16..];
        if body.len() != 4 * t * h * w {
            return Err(Error::Format(format!(
                "TDXH body holds {} bytes, header implies {}",
                body.len(),
                4 * t * h * w
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Array3::from_shape_vec((t, h, w), values).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Writes `<path>` (the TDXH payload) and `meta.json` next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let meta_path = path.with_file_name(META_FILE);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&meta_path, e))?;
        fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let maps = Self::maps_from_bytes(&bytes)?;
        let meta_path = path.with_file_name(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        Ok(Self { maps, meta })
    }
}
