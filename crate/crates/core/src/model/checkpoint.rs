//! Checkpoint directories: `config.json`, `index.json`, one little-endian
//! `f32` blob per layer (`<layer>.bin`, tensors concatenated row-major in
//! index order) and `training_log.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, EpochLog, ModelConfig, TrainedModel};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const INDEX_FILE: &str = "index.json";
const LOG_FILE: &str = "training_log.json";

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    dtype: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    file: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_checkpoint(model: &TrainedModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(CONFIG_FILE), &model.config)?;
    write_json(&dir.join(LOG_FILE), &model.training_log)?;

    let mut layers: Vec<(LayerEntry, Vec<u8>)> = Vec::new();
    for t in model.network.tensors() {
        if layers.last().map(|l| l.0.name != t.layer).unwrap_or(true) {
            layers.push((
                LayerEntry {
                    file: format!("{}.bin", t.layer),
                    name: t.layer.clone(),
                    tensors: Vec::new(),
                },
                Vec::new(),
            ));
        }
        let (entry, blob) = layers.last_mut().expect("pushed above");
        entry.tensors.push(TensorEntry {
            name: t.name.to_string(),
            shape: t.shape.clone(),
        });
        blob.extend(t.data.iter().flat_map(|v| (*v as f32).to_le_bytes()));
    }
    for (entry, blob) in &layers {
        let path = dir.join(&entry.file);
        fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    }
    write_json(
        &dir.join(INDEX_FILE),
        &Index {
            dtype: "f32-le".into(),
            layers: layers.into_iter().map(|l| l.0).collect(),
        },
    )
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let config: ModelConfig = read_json(&dir.join(CONFIG_FILE))?;
    let index: Index = read_json(&dir.join(INDEX_FILE))?;
    if index.dtype != "f32-le" {
        return Err(Error::Format(format!("unsupported parameter dtype {:?}", index.dtype)));
    }
    let log_path = dir.join(LOG_FILE);
    let training_log: Vec<EpochLog> = if log_path.exists() { read_json(&log_path)? } else { Vec::new() };

    let mut model = build_model(&config)?;
    let mut blobs = Vec::with_capacity(index.layers.len());
    for layer in &index.layers {
        let path = dir.join(&layer.file);
        blobs.push((layer, fs::read(&path).map_err(|e| Error::io(&path, e))?, 0usize));
    }
    let mut tensors = model.network.tensors_mut();
    let mut cursor = 0;
    for (layer, blob, _) in &mut blobs {
        let mut offset = 0;
        for entry in &layer.tensors {
            let t = tensors.get_mut(cursor).ok_or_else(|| {
                Error::Format(format!("checkpoint has more tensors than the {} architecture", config.backbone))
            })?;
            if t.layer != layer.name || t.name != entry.name || t.shape != entry.shape {
                return Err(Error::Format(format!(
                    "tensor {}.{} {:?} does not match expected {}.{} {:?}",
                    layer.name, entry.name, entry.shape, t.layer, t.name, t.shape
                )));
            }
            let bytes = t.data.len() * 4;
            let chunk = blob.get(offset..offset + bytes).ok_or_else(|| {
                Error::Format(format!("{} is truncated", layer.file))
            })?;
            for (v, b) in t.data.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            }
            offset += bytes;
            cursor += 1;
        }
        if offset != blob.len() {
            return Err(Error::Format(format!("{} has trailing bytes", layer.file)));
        }
    }
    if cursor != tensors.len() {
        return Err(Error::Format("checkpoint is missing tensors".into()));
    }
    drop(tensors);
    model.training_log = training_log;
    Ok(model)
}
