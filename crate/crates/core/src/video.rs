//! Video sequences: frame-directory I/O, resizing, and the synthetic
//! slow-versus-sudden motion dataset.
//!
//! A sequence directory holds `frame_0000.png`, `frame_0001.png`, ... plus a
//! `manifest.json` with the keys `label`, `frames` and `seed`. A dataset root
//! holds one directory per class with one sub-directory per sequence, and a
//! `dataset.json` describing how it was generated.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{s, Array4, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resize;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.json";

/// Position of the synthetic moving disk in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeBox {
    pub cx: i64,
    pub cy: i64,
    pub radius: i64,
}

impl ShapeBox {
    /// Inclusive pixel bounds `(x0, y0, x1, y1)` grown by `dilation` and
    /// clipped to a `height` x `width` frame.
    pub fn bounds(&self, dilation: i64, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let clip = |v: i64, len: usize| v.clamp(0, len as i64 - 1) as usize;
        (
            clip(self.cx - self.radius - dilation, width),
            clip(self.cy - self.radius - dilation, height),
            clip(self.cx + self.radius + dilation, width),
            clip(self.cy + self.radius + dilation, height),
        )
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub label: String,
    pub frames: Vec<String>,
    pub seed: Option<u64>,
    /// Ground-truth shape positions, present for synthetic sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Vec<ShapeBox>>,
    /// Directory the sequence was loaded from.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

/// An ordered stack of frames (`T x H x W x C`, values in `[0, 1]`) with its
/// label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Array4<f32>,
    manifest: SequenceManifest,
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

impl VideoSequence {
    /// Wraps a frame array, checking the value-range invariants. Frame file
    /// names are assigned as `frame_0000.png`, ...
    pub fn new(frames: Array4<f32>, label: impl Into<String>) -> Result<Self> {
        let names = (0..frames.len_of(Axis(0))).map(frame_name).collect();
        Self::with_manifest(
            frames,
            SequenceManifest {
                label: label.into(),
                frames: names,
                seed: None,
                track: None,
                source: None,
            },
        )
    }

    pub fn with_manifest(frames: Array4<f32>, manifest: SequenceManifest) -> Result<Self> {
        let (t, h, w, c) = frames.dim();
        if t == 0 {
            return Err(Error::EmptyInput("sequence has no frames".into()));
        }
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("degenerate frame shape {h}x{w}x{c}")));
        }
        if manifest.frames.len() != t {
            return Err(Error::Format(format!(
                "manifest lists {} frames but {t} were provided",
                manifest.frames.len()
            )));
        }
        if let Some(v) = frames.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Argument(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self { frames, manifest })
    }

    pub fn frames(&self) -> ArrayView4<'_, f32> {
        self.frames.view()
    }

    pub fn into_frames(self) -> Array4<f32> {
        self.frames
    }

    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }

    pub fn label(&self) -> &str {
        &self.manifest.label
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.frames.len_of(Axis(2))
    }

    pub fn channels(&self) -> usize {
        self.frames.len_of(Axis(3))
    }

    /// Frames converted to `f64`, the precision the model computes in.
    pub fn to_f64(&self) -> Array4<f64> {
        self.frames.mapv(f64::from)
    }

    /// Copy of the sequence with frames in reverse temporal order.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.frames = self.frames.slice(s![..;-1, .., .., ..]).to_owned();
        if let Some(track) = out.manifest.track.as_mut() {
            track.reverse();
        }
        out
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a sequence as `frame_NNNN.png` files plus `manifest.json`.
pub fn save_sequence(seq: &VideoSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (_, h, w, c) = seq.frames.dim();
    for (t, name) in seq.manifest.frames.iter().enumerate() {
        let frame = seq.frames.index_axis(Axis(0), t);
        let path = dir.join(name);
        let res = if c == 1 {
            let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([to_u8(frame[[y as usize, x as usize, 0]])])
            });
            img.save(&path)
        } else if c == 3 {
            let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let p = |k| to_u8(frame[[y as usize, x as usize, k]]);
                Rgb([p(0), p(1), p(2)])
            });
            img.save(&path)
        } else {
            return Err(Error::Shape(format!("cannot encode {c}-channel frames")));
        };
        res.map_err(|source| Error::Image { path, source })?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&seq.manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads a sequence directory written by [`save_sequence`] (or by hand,
/// following the same layout).
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<VideoSequence> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("missing or unreadable {}: {e}", path.display())))?;
    let mut manifest: SequenceManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("malformed {}: {e}", path.display())))?;
    if manifest.frames.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no frames", path.display())));
    }
    if manifest.frames.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Format(
            "manifest frame names must be in strictly increasing lexicographic order".into(),
        ));
    }

    let mut decoded = Vec::with_capacity(manifest.frames.len());
    for name in &manifest.frames {
        let path = dir.join(name);
        let img = image::open(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let gray = matches!(
            img.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f32> = if gray {
            img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        } else {
            img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        };
        decoded.push((h, w, if gray { 1 } else { 3 }, data));
    }

    let (h, w, c, _) = decoded[0];
    if let Some((i, d)) = decoded
        .iter()
        .enumerate()
        .find(|(_, d)| (d.0, d.1, d.2) != (h, w, c))
    {
        return Err(Error::Shape(format!(
            "frame {} is {}x{}x{}, expected {h}x{w}x{c}",
            manifest.frames[i], d.0, d.1, d.2
        )));
    }
    let t = decoded.len();
    let flat: Vec<f32> = decoded.into_iter().flat_map(|d| d.3).collect();
    let frames = Array4::from_shape_vec((t, h, w, c), flat)
        .map_err(|e| Error::Internal(e.to_string()))?;
    manifest.source = Some(dir.to_path_buf());
    VideoSequence::with_manifest(frames, manifest)
}

/// Bilinearly resizes every frame to `target_hw`.
pub fn preprocess(seq: &VideoSequence, target_hw: (usize, usize)) -> Result<VideoSequence> {
    let (th, tw) = target_hw;
    if th < 8 || tw < 8 {
        return Err(Error::Argument(format!(
            "target size {th}x{tw} is below the 8x8 minimum"
        )));
    }
    let (t, h, w, c) = seq.frames.dim();
    if (h, w) == (th, tw) {
        return Ok(seq.clone());
    }
    let mut out = Array4::<f32>::zeros((t, th, tw, c));
    for ti in 0..t {
        for ci in 0..c {
            let plane = seq.frames.slice(s![ti, .., .., ci]).mapv(f64::from);
            let resized = resize::bilinear(plane.view(), th, tw);
            out.slice_mut(s![ti, .., .., ci])
                .assign(&resized.mapv(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    let mut manifest = seq.manifest.clone();
    if let Some(track) = manifest.track.as_mut() {
        let (sy, sx) = (th as f64 / h as f64, tw as f64 / w as f64);
        for b in track.iter_mut() {
            b.cx = ((b.cx as f64 + 0.5) * sx - 0.5).round() as i64;
            b.cy = ((b.cy as f64 + 0.5) * sy - 0.5).round() as i64;
            b.radius = (b.radius as f64 * sx.max(sy)).ceil() as i64;
        }
    }
    VideoSequence::with_manifest(out, manifest)
}

/// Parameters of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Sequences generated per class.
    pub num_sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub classes: Vec<String>,
    pub seed: u64,
}

fn default_channels() -> usize {
    1
}

pub const NORMAL_CLASS: &str = "normal";

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_sequences: 50,
            frames: 8,
            height: 64,
            width: 64,
            channels: 1,
            classes: vec!["normal".into(), "fight".into(), "gunshot".into()],
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 4 {
            return Err(Error::Argument(format!(
                "{} frames per sequence leaves no room for a sudden event (need at least 4)",
                self.frames
            )));
        }
        if self.height.min(self.width) < 16 {
            return Err(Error::Argument(format!(
                "synthetic frames must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.num_sequences == 0 {
            return Err(Error::Argument("num_sequences must be positive".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::Argument(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !self.classes.iter().any(|c| c == NORMAL_CLASS) {
            return Err(Error::Argument("classes must include \"normal\"".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Argument("classes need at least one anomaly class".into()));
        }
        let mut sorted = self.classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.classes.len() {
            return Err(Error::Argument("duplicate class names".into()));
        }
        Ok(())
    }
}

/// Generates the synthetic dataset, class-major in `spec.classes` order.
///
/// Every sequence shows a bright disk on a static textured background,
/// starting near the frame center. In "normal" sequences the disk sways
/// back and forth by one pixel every other frame, staying within
/// `max(1, min(H, W) / 16)` pixels of where it started. In every other class
/// it sways the same way but jumps once, at a random frame at least two
/// frames from either end, by at least a quarter of the frame size. Each anomaly class jumps
/// along its own axis (the first horizontally, the second vertically, further
/// classes at intermediate angles) so the classes stay separable.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Vec<VideoSequence>> {
    spec.validate()?;
    let anomalies: Vec<&String> = spec.classes.iter().filter(|c| *c != NORMAL_CLASS).collect();
    let mut out = Vec::with_capacity(spec.num_sequences * spec.classes.len());
    for (class_idx, class) in spec.classes.iter().enumerate() {
        let jump_axis = anomalies.iter().position(|a| *a == class).map(|k| {
            std::f64::consts::PI * k as f64 / anomalies.len() as f64
        });
        for i in 0..spec.num_sequences {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((class_idx as u64) << 32) | i as u64);
            out.push(synth_sequence(spec, class, jump_axis, &mut rng)?);
        }
    }
    Ok(out)
}

fn synth_sequence(
    spec: &DatasetSpec,
    label: &str,
    jump_axis: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<VideoSequence> {
    let (t_len, h, w) = (spec.frames, spec.height, spec.width);
    let min_side = h.min(w) as i64;
    let radius = (min_side / 8).max(2);
    let (x_lo, x_hi) = (radius, w as i64 - 1 - radius);
    let (y_lo, y_hi) = (radius, h as i64 - 1 - radius);

    let background = rng.gen_range(0.1..0.3);
    let texture: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-0.03..0.03)).collect();
    let intensity = rng.gen_range(0.7..0.95);

    // The disk sways around an anchor near the frame center; a jump moves
    // the anchor.
    let spread = (min_side / 16).max(1);
    let mut ax = w as i64 / 2 + rng.gen_range(-spread..=spread);
    let mut ay = h as i64 / 2 + rng.gen_range(-spread..=spread);
    let (sx, sy) = [(1, 0), (-1, 0), (0, 1), (0, -1)][rng.gen_range(0..4)];
    let mut offset = 0i64;
    let mut step = 1i64;
    let phase = rng.gen_range(0..2usize);
    let jump_at = jump_axis.map(|_| rng.gen_range(2..=t_len - 2));
    let base_jump = (min_side + 3) / 4;
    let jump_len = base_jump + rng.gen_range(0..=(min_side / 16).max(1));

    let mut track = Vec::with_capacity(t_len);
    track.push(ShapeBox { cx: ax, cy: ay, radius });
    for t in 1..t_len {
        if Some(t) == jump_at {
            let theta = jump_axis.unwrap_or(0.0);
            let mut len = jump_len as f64;
            let (mut jx, mut jy);
            loop {
                jx = (len * theta.cos()).round() as i64;
                jy = (len * theta.sin()).round() as i64;
                if ((jx * jx + jy * jy) as f64).sqrt() >= base_jump as f64 {
                    break;
                }
                len += 1.0;
            }
            let (x, y) = (ax + sx * offset, ay + sy * offset);
            let pick = |pos: i64, d: i64, lo: i64, hi: i64| -> Option<i64> {
                [pos + d, pos - d].into_iter().find(|p| (lo..=hi).contains(p))
            };
            let nx = pick(x, jx, x_lo, x_hi)
                .ok_or_else(|| Error::Internal("horizontal jump does not fit the frame".into()))?;
            let ny = pick(y, jy, y_lo, y_hi)
                .ok_or_else(|| Error::Internal("vertical jump does not fit the frame".into()))?;
            ax += nx - x;
            ay += ny - y;
        } else if (t + phase) % 2 == 0 {
            let next = offset + step;
            let (x, y) = (ax + sx * next, ay + sy * next);
            if next.abs() > spread || !(x_lo..=x_hi).contains(&x) || !(y_lo..=y_hi).contains(&y) {
                step = -step;
            }
            offset += step;
        }
        track.push(ShapeBox {
            cx: ax + sx * offset,
            cy: ay + sy * offset,
            radius,
        });
    }

    let c = spec.channels;
    let mut frames = Array4::<f32>::zeros((t_len, h, w, c));
    for (t, b) in track.iter().enumerate() {
        for yi in 0..h {
            for xi in 0..w {
                let (ddx, ddy) = (xi as i64 - b.cx, yi as i64 - b.cy);
                let v = if ddx * ddx + ddy * ddy <= b.radius * b.radius {
                    intensity
                } else {
                    background + texture[yi * w + xi]
                };
                // quantized so a PNG round trip is lossless
                let q = ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
                for ci in 0..c {
                    frames[[t, yi, xi, ci]] = q;
                }
            }
        }
    }

    let manifest = SequenceManifest {
        label: label.to_string(),
        frames: (0..t_len).map(frame_name).collect(),
        seed: Some(spec.seed),
        track: Some(track),
        source: None,
    };
    VideoSequence::with_manifest(frames, manifest)
}

/// A labelled collection of sequences with a fixed class order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub sequences: Vec<VideoSequence>,
}

impl Dataset {
    /// Index of a sequence's label in `classes`.
    pub fn class_index(&self, seq: &VideoSequence) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == seq.label())
            .ok_or_else(|| Error::Argument(format!("label {:?} is not a known class", seq.label())))
    }

    /// Stratified split: within each class the sequences are shuffled with
    /// `seed` and the first `train_fraction` go to the training set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Argument(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (ci, class) in self.classes.iter().enumerate() {
            let mut members: Vec<&VideoSequence> =
                self.sequences.iter().filter(|s| s.label() == class).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci as u64);
            for i in (1..members.len()).rev() {
                let j = rng.gen_range(0..=i);
                members.swap(i, j);
            }
            let n_train = (members.len() as f64 * train_fraction).round() as usize;
            train.extend(members[..n_train].iter().map(|s| (*s).clone()));
            test.extend(members[n_train..].iter().map(|s| (*s).clone()));
        }
        let make = |sequences| Dataset {
            classes: self.classes.clone(),
            sequences,
        };
        Ok((make(train), make(test)))
    }
}

/// Writes `<root>/<class>/seq_NNNN/` directories plus `<root>/dataset.json`.
pub fn write_dataset(root: impl AsRef<Path>, spec: &DatasetSpec, sequences: &[VideoSequence]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for class in &spec.classes {
        for (i, seq) in sequences.iter().filter(|s| s.label() == class).enumerate() {
            save_sequence(seq, root.join(class).join(format!("seq_{i:04}")))?;
        }
    }
    let path = root.join(DATASET_FILE);
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads a dataset root. Class order comes from `dataset.json` when present,
/// otherwise from the sorted class directory names.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let spec_path = root.join(DATASET_FILE);
    let classes: Vec<String> = if spec_path.exists() {
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: DatasetSpec = serde_json::from_str(&text).map_err(|e| Error::json(&spec_path, e))?;
        spec.classes
    } else {
        sorted_subdirs(root)?
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    };
    let mut sequences = Vec::new();
    for class in &classes {
        let class_dir = root.join(class);
        if !class_dir.is_dir() {
            continue;
        }
        for dir in sorted_subdirs(&class_dir)? {
            let seq = load_sequence(&dir)?;
            if seq.label() != class {
                return Err(Error::Format(format!(
                    "{} is labelled {:?} but stored under class {class:?}",
                    dir.display(),
                    seq.label()
                )));
            }
            sequences.push(seq);
        }
    }
    if sequences.is_empty() {
        return Err(Error::EmptyInput(format!("no sequences under {}", root.display())));
    }
    Ok(Dataset { classes, sequences })
}
