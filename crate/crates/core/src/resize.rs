use ndarray::{Array2, ArrayView2};

/// Sampling taps along one axis: (low index, high index, weight of high).
fn taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            // Half-pixel centers; same-size resize maps every index onto itself.
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            let frac = if hi == lo { 0.0 } else { s - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Bilinear resize of a single plane.
pub(crate) fn bilinear(src: ArrayView2<f64>, dst_h: usize, dst_w: usize) -> Array2<f64> {
    let (src_h, src_w) = src.dim();
    let rows = taps(src_h, dst_h);
    let cols = taps(src_w, dst_w);
    Array2::from_shape_fn((dst_h, dst_w), |(y, x)| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}
