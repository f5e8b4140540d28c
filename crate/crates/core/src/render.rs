//! Overlay rendering: heatmap color ramps and labelled contour drawings.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{s, Array2};

use crate::contour::{extract_contours, ContourSet, DEFAULT_LEVELS};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;
use crate::resize;
use crate::video::VideoSequence;

pub const HEAT_ALPHA: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlayMode {
    Heat,
    Contour,
}

impl OverlayMode {
    pub fn name(self) -> &'static str {
        match self {
            OverlayMode::Heat => "heat",
            OverlayMode::Contour => "contour",
        }
    }
}

impl std::str::FromStr for OverlayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(OverlayMode::Heat),
            "contour" => Ok(OverlayMode::Contour),
            other => Err(Error::Argument(format!("unknown overlay mode {other:?}"))),
        }
    }
}

/// Hue ramp from blue (0) to red (1), full saturation and value.
pub fn ramp(v: f64) -> [f64; 3] {
    let hue = 240.0 * (1.0 - v.clamp(0.0, 1.0));
    let sector = hue / 60.0;
    let x = 1.0 - (sector % 2.0 - 1.0).abs();
    let (r, g, b) = match sector as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        _ => (x, 0.0, 1.0),
    };
    [r * 255.0, g * 255.0, b * 255.0]
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The frame as an 8-bit RGB image (gray frames are replicated).
pub fn frame_image(seq: &VideoSequence, t: usize) -> RgbImage {
    let frames = seq.frames();
    let c = seq.channels();
    RgbImage::from_fn(seq.width() as u32, seq.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if c >= 3 {
            Rgb([to_u8(frames[[t, y, x, 0]]), to_u8(frames[[t, y, x, 1]]), to_u8(frames[[t, y, x, 2]])])
        } else {
            let v = to_u8(frames[[t, y, x, 0]]);
            Rgb([v, v, v])
        }
    })
}

fn heat_at_frame_size(stack: &HeatmapStack, t: usize, h: usize, w: usize) -> Array2<f64> {
    let map = stack.maps.slice(s![t, .., ..]).mapv(f64::from);
    if map.dim() == (h, w) {
        map
    } else {
        resize::bilinear(map.view(), h, w)
    }
}

/// Alpha-blends the ramp color over the frame with opacity
/// `HEAT_ALPHA * value`, so zero heat leaves a pixel untouched.
pub fn blend_heat(base: &RgbImage, heat: &Array2<f64>) -> RgbImage {
    let mut out = base.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = heat[[y as usize, x as usize]].clamp(0.0, 1.0);
        if v == 0.0 {
            continue;
        }
        let a = HEAT_ALPHA * v;
        let color = ramp(v);
        for k in 0..3 {
            px.0[k] = (px.0[k] as f64 * (1.0 - a) + color[k] * a).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_segment(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: Rgb<u8>) {
    let len = ((b[0] - a[0]).abs()).max((b[1] - a[1]).abs());
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let x = a[0] + (b[0] - a[0]) * f;
        let y = a[1] + (b[1] - a[1]) * f;
        put(img, (x + 0.5).floor() as i64, (y + 0.5).floor() as i64, color);
    }
}

/// 3x5 glyphs for digits and the decimal point, one row per entry, MSB left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => [0; 5],
    }
}

/// Draws `text` with its top-left corner at `(x, y)`, nudged inside the image.
pub fn draw_text(img: &mut RgbImage, text: &str, x: i64, y: i64, color: Rgb<u8>) {
    let width = text.chars().count() as i64 * 4 - 1;
    let x = x.min(img.width() as i64 - width).max(0);
    let y = y.min(img.height() as i64 - 5).max(0);
    for (i, ch) in text.chars().enumerate() {
        let g = glyph(ch);
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    put(img, x + i as i64 * 4 + col, y + row as i64, color);
                }
            }
        }
    }
}

fn level_color(level: f64) -> Rgb<u8> {
    let c = ramp(level);
    Rgb([c[0].round() as u8, c[1].round() as u8, c[2].round() as u8])
}

/// Renders one overlay image per frame.
///
/// `Heat` blends the color ramp over the frame. `Contour` draws every
/// contour in its level's ramp color and prints its mean intensity with two
/// decimals above its topmost vertex. When `contours` is `None` they are
/// extracted at the default levels.
pub fn render_overlay(
    seq: &VideoSequence,
    stack: &HeatmapStack,
    mode: OverlayMode,
    contours: Option<&ContourSet>,
) -> Result<Vec<RgbImage>> {
    if stack.len() != seq.len() {
        return Err(Error::Shape(format!(
            "heatmap stack has {} frames, sequence has {}",
            stack.len(),
            seq.len()
        )));
    }
    let (h, w) = (seq.height(), seq.width());
    let owned;
    let contours = match (mode, contours) {
        (OverlayMode::Contour, None) => {
            owned = extract_contours(stack, &DEFAULT_LEVELS)?;
            Some(&owned)
        }
        (_, c) => c,
    };
    if let Some(c) = contours {
        if mode == OverlayMode::Contour && c.frames.len() != seq.len() {
            return Err(Error::Shape(format!(
                "contour set has {} frames, sequence has {}",
                c.frames.len(),
                seq.len()
            )));
        }
    }
    let sx = w as f64 / stack.width().max(1) as f64;
    let sy = h as f64 / stack.height().max(1) as f64;
    let scale = |p: [f64; 2]| [(p[0] + 0.5) * sx - 0.5, (p[1] + 0.5) * sy - 0.5];

    let mut out = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let base = frame_image(seq, t);
        let img = match mode {
            OverlayMode::Heat => blend_heat(&base, &heat_at_frame_size(stack, t, h, w)),
            OverlayMode::Contour => {
                let mut img = base;
                let frame = &contours.expect("contours resolved above").frames[t];
                for c in &frame.contours {
                    let color = level_color(c.level);
                    for seg in c.points.windows(2) {
                        draw_segment(&mut img, scale(seg[0]), scale(seg[1]), color);
                    }
                }
                for c in &frame.contours {
                    let top = scale(c.topmost());
                    let label = format!("{:.2}", c.mean_intensity);
                    draw_text(&mut img, &label, top[0].round() as i64, top[1].round() as i64 - 6, level_color(c.level));
                }
                img
            }
        };
        out.push(img);
    }
    Ok(out)
}

/// Writes `overlay_<mode>_NNNN.png` files and returns their paths.
pub fn write_overlays(dir: impl AsRef<Path>, mode: OverlayMode, images: &[RgbImage]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(t, img)| {
            let path = dir.join(format!("overlay_{}_{t:04}.png", mode.name()));
            img.save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

/// Places images side by side, separated by a one-pixel black gap.
pub fn tile_horizontal(images: &[RgbImage]) -> RgbImage {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let w = images.iter().map(|i| i.width() + 1).sum::<u32>().saturating_sub(1);
    let mut out = RgbImage::new(w, h);
    let mut x0 = 0;
    for img in images {
        for (x, y, p) in img.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *p);
        }
        x0 += img.width() + 1;
    }
    out
}
