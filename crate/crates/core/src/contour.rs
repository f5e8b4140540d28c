//! Level-set contours of heatmaps.
//!
//! Each frame is binarized at every threshold level. Foreground regions are
//! 8-connected (background 4-connected) and the outer border of every region
//! is followed along pixel edges, so a contour encloses exactly the pixels of
//! its region plus any holes in it. Vertices sit on pixel corners: pixel
//! `(x, y)` covers `[x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]`.
//!
//! Contours at all levels of a frame form one hierarchy: a contour's parent
//! is the smallest other contour whose interior contains its interior, which
//! captures both "minor area around a major one" nesting across levels and
//! islands inside rings at the same level. Every contour also carries the
//! mean heatmap value over its interior.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;

pub const DEFAULT_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    /// Index of the enclosing contour within the same frame.
    pub parent: Option<usize>,
    pub mean_intensity: f64,
    /// Closed polyline: the last point repeats the first.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameContours {
    pub contours: Vec<Contour>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContourSet {
    pub frames: Vec<FrameContours>,
}

impl ContourSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contour sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed contour JSON: {e}")))
    }

    pub fn is_empty(&self) -> bool {
        self.frames.iter().all(|f| f.contours.is_empty())
    }
}

impl Contour {
    /// Polygon area (shoelace); equals the enclosed pixel count.
    pub fn area(&self) -> f64 {
        polygon_area(&self.points)
    }

    pub fn centroid(&self) -> [f64; 2] {
        polygon_centroid(&self.points)
    }

    /// Vertex with the smallest `y` (then smallest `x`).
    pub fn topmost(&self) -> [f64; 2] {
        self.points
            .iter()
            .copied()
            .fold([f64::INFINITY, f64::INFINITY], |best, p| {
                if p[1] < best[1] || (p[1] == best[1] && p[0] < best[0]) {
                    p
                } else {
                    best
                }
            })
    }
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Argument("at least one contour level is required".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::Argument(format!("contour level {l} outside (0, 1]")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("contour levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Extracts contours for every frame of `stack`. Frames are processed in
/// parallel; output order follows frame order.
pub fn extract_contours(stack: &HeatmapStack, levels: &[f64]) -> Result<ContourSet> {
    validate_levels(levels)?;
    let frames = (0..stack.len())
        .into_par_iter()
        .map(|t| extract_frame(stack.frame(t), levels))
        .collect();
    Ok(ContourSet { frames })
}

/// Contours of one map. `levels` must already be validated.
pub fn extract_frame(map: ArrayView2<f32>, levels: &[f64]) -> FrameContours {
    let (h, w) = map.dim();
    let mut found: Vec<(Contour, Vec<bool>, usize)> = Vec::new();
    for &level in levels {
        let mask: Vec<bool> = map.iter().map(|&v| v as f64 >= level).collect();
        let (labels, count) = label_components(&mask, h, w);
        let mut starts = vec![usize::MAX; count];
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 && starts[l - 1] == usize::MAX {
                starts[l - 1] = i;
            }
        }
        for (c, &start) in starts.iter().enumerate() {
            let corners = trace_outer_border(&labels, h, w, c + 1, start);
            let points: Vec<[f64; 2]> = corners
                .iter()
                .map(|&(x, y)| [x as f64 - 0.5, y as f64 - 0.5])
                .collect();
            let inside = fill_polygon(&points, h, w);
            let n = inside.iter().filter(|v| **v).count();
            let sum: f64 = map.iter().zip(&inside).filter(|(_, i)| **i).map(|(v, _)| *v as f64).sum();
            found.push((
                Contour {
                    level,
                    parent: None,
                    mean_intensity: (sum / n.max(1) as f64).clamp(0.0, 1.0),
                    points,
                },
                inside,
                n,
            ));
        }
    }

    let parents: Vec<Option<usize>> = (0..found.len())
        .map(|i| {
            let (ci, inner, area_i) = &found[i];
            let area_i = *area_i;
            found
                .iter()
                .enumerate()
                .filter(|(j, (cj, _, area_j))| {
                    *j != i && (*area_j > area_i || (*area_j == area_i && cj.level < ci.level))
                })
                .filter(|(_, (_, outer, _))| inner.iter().zip(outer).all(|(a, b)| !*a || *b))
                .min_by(|(ja, (ca, _, aa)), (jb, (cb, _, ab))| {
                    aa.cmp(ab)
                        .then(cb.level.total_cmp(&ca.level))
                        .then(ja.cmp(jb))
                })
                .map(|(j, _)| j)
        })
        .collect();

    FrameContours {
        contours: found
            .into_iter()
            .zip(parents)
            .map(|((mut c, _, _), p)| {
                c.parent = p;
                c
            })
            .collect(),
    }
}

/// 8-connected labelling in raster order; labels start at 1, 0 is background.
fn label_components(mask: &[bool], h: usize, w: usize) -> (Vec<usize>, usize) {
    let mut labels = vec![0usize; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    East,
    South,
    West,
    North,
}

impl Dir {
    fn left(self) -> Dir {
        match self {
            Dir::East => Dir::North,
            Dir::North => Dir::West,
            Dir::West => Dir::South,
            Dir::South => Dir::East,
        }
    }

    fn right(self) -> Dir {
        self.left().left().left()
    }

    fn step(self) -> (i64, i64) {
        match self {
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
            Dir::North => (0, -1),
        }
    }

    /// Pixels ahead of corner `(cx, cy)`: (ahead-left, ahead-right).
    fn ahead(self, cx: i64, cy: i64) -> ((i64, i64), (i64, i64)) {
        match self {
            Dir::East => ((cx, cy - 1), (cx, cy)),
            Dir::South => ((cx, cy), (cx - 1, cy)),
            Dir::West => ((cx - 1, cy), (cx - 1, cy - 1)),
            Dir::North => ((cx - 1, cy - 1), (cx, cy - 1)),
        }
    }
}

/// Follows the outer border of component `label` along pixel edges, keeping
/// the region on the right. Starts at the top-left corner of the component's
/// first raster pixel heading east. Returns the corner vertices where the
/// direction changes, closed (first == last).
fn trace_outer_border(labels: &[usize], h: usize, w: usize, label: usize, start: usize) -> Vec<(i64, i64)> {
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && labels[y as usize * w + x as usize] == label
    };
    let origin = ((start % w) as i64, (start / w) as i64);
    let mut pos = origin;
    let mut dir = Dir::East;
    let mut corners = vec![origin];
    loop {
        let (dx, dy) = dir.step();
        pos = (pos.0 + dx, pos.1 + dy);
        let (al, ar) = dir.ahead(pos.0, pos.1);
        let next = if inside(al.0, al.1) {
            dir.left()
        } else if inside(ar.0, ar.1) {
            dir
        } else {
            dir.right()
        };
        if pos == origin && next == Dir::East {
            break;
        }
        if next != dir {
            corners.push(pos);
        }
        dir = next;
    }
    corners.push(origin);
    corners
}

/// Shoelace area of a closed polyline.
pub fn polygon_area(points: &[[f64; 2]]) -> f64 {
    signed_area(points).abs()
}

fn signed_area(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|p| p[0][0] * p[1][1] - p[1][0] * p[0][1])
        .sum::<f64>()
        / 2.0
}

pub fn polygon_centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let a = signed_area(points);
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.windows(2) {
        let cross = p[0][0] * p[1][1] - p[1][0] * p[0][1];
        cx += (p[0][0] + p[1][0]) * cross;
        cy += (p[0][1] + p[1][1]) * cross;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

/// Even-odd point-in-polygon test on a closed polyline.
pub fn point_in_polygon(p: [f64; 2], points: &[[f64; 2]]) -> bool {
    let mut inside = false;
    for e in points.windows(2) {
        let (a, b) = (e[0], e[1]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Even-odd membership of every pixel center in an `h x w` grid.
pub fn fill_polygon(points: &[[f64; 2]], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    let mut xs = Vec::new();
    for y in 0..h {
        let py = y as f64;
        xs.clear();
        for e in points.windows(2) {
            let (a, b) = (e[0], e[1]);
            if (a[1] > py) != (b[1] > py) {
                xs.push(a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = pair[0].ceil().max(0.0) as usize;
            let x1 = pair[1].floor().min(w as f64 - 1.0);
            if x1 < 0.0 {
                continue;
            }
            for x in x0..=x1 as usize {
                out[y * w + x] = true;
            }
        }
    }
    out
}

/// Number of pixel centers inside at least one contour at `level`.
pub fn interior_area(frame: &FrameContours, level: f64, h: usize, w: usize) -> usize {
    let mut union = vec![false; h * w];
    for c in frame.contours.iter().filter(|c| c.level == level) {
        for (u, v) in union.iter_mut().zip(fill_polygon(&c.points, h, w)) {
            *u |= v;
        }
    }
    union.iter().filter(|v| **v).count()
}
