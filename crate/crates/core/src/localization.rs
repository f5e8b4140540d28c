//! Checks whether explanation maps concentrate on the moving shape of a
//! synthetic sequence.
//!
//! For each frame, the heat mass inside the shape's bounding box (grown by a
//! margin) is compared with the mass inside a box of the same size placed
//! uniformly at random. A sequence passes when the summed shape-box mass
//! exceeds the summed random-box mass.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;
use crate::video::ShapeBox;

pub const DEFAULT_DILATION: i64 = 4;

/// Sum of map values in the inclusive box `(x0, y0, x1, y1)`.
pub fn box_mass(map: ArrayView2<f32>, bounds: (usize, usize, usize, usize)) -> f64 {
    let (x0, y0, x1, y1) = bounds;
    let mut total = 0.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            total += map[[y, x]] as f64;
        }
    }
    total
}

/// Shape-box mass and random-box mass summed over frames.
pub fn box_masses(stack: &HeatmapStack, track: &[ShapeBox], dilation: i64, seed: u64) -> Result<(f64, f64)> {
    if track.len() != stack.len() {
        return Err(Error::Shape(format!(
            "track has {} entries, heatmap stack has {} frames",
            track.len(),
            stack.len()
        )));
    }
    let (h, w) = (stack.height(), stack.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut shape, mut random) = (0.0, 0.0);
    for (t, b) in track.iter().enumerate() {
        let map = stack.frame(t);
        let (x0, y0, x1, y1) = b.bounds(dilation, h, w);
        shape += box_mass(map, (x0, y0, x1, y1));
        let (bw, bh) = (x1 - x0, y1 - y0);
        let rx = rng.gen_range(0..w - bw);
        let ry = rng.gen_range(0..h - bh);
        random += box_mass(map, (rx, ry, rx + bw, ry + bh));
    }
    Ok((shape, random))
}

pub fn beats_random_box(stack: &HeatmapStack, track: &[ShapeBox], dilation: i64, seed: u64) -> Result<bool> {
    let (shape, random) = box_masses(stack, track, dilation, seed)?;
    Ok(shape > random)
}
