//! Layer primitives with explicit forward caches and backward passes.
//!
//! All tensors are `f64` in NHWC layout. Convolutions are 3x3, stride 1,
//! zero "same" padding, evaluated as im2col followed by one matrix product.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis, Zip};

/// 3x3 same-padding convolution. `weight` is `3 x 3 x C_in x C_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Array4::zeros((3, 3, c_in, c_out)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().3
    }

    fn kernel_matrix(&self) -> ArrayView2<'_, f64> {
        let (c_in, c_out) = (self.in_channels(), self.out_channels());
        self.weight
            .view()
            .into_shape_with_order((9 * c_in, c_out))
            .expect("conv weight is contiguous")
    }

    /// Returns the output together with the im2col matrix needed by
    /// [`Conv2d::backward`].
    pub fn forward(&self, x: ArrayView4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (n, h, w, _) = x.dim();
        let cols = im2col(x);
        let mut out = cols.dot(&self.kernel_matrix());
        out += &self.bias;
        let out = out
            .into_shape_with_order((n, h, w, self.out_channels()))
            .expect("conv output reshape");
        (out, cols)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        cols: &Array2<f64>,
        input_dim: (usize, usize, usize, usize),
        d_out: ArrayView4<f64>,
        grad: Option<&mut Conv2d>,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let (n, h, w, _) = input_dim;
        let c_out = self.out_channels();
        let d_out = d_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * h * w, c_out))
            .expect("conv grad reshape");
        if let Some(g) = grad {
            let dw = cols.t().dot(&d_out);
            let c_in = self.in_channels();
            let mut gw = g
                .weight
                .view_mut()
                .into_shape_with_order((9 * c_in, c_out))
                .expect("conv weight is contiguous");
            gw += &dw;
            g.bias += &d_out.sum_axis(Axis(0));
        }
        need_input.then(|| {
            let d_cols = d_out.dot(&self.kernel_matrix().t());
            col2im(&d_cols, input_dim)
        })
    }
}

fn im2col(x: ArrayView4<f64>) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let row_len = 9 * c;
    let mut cols = vec![0.0; n * h * w * row_len];
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((ni * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let s = ((ni * h + sy as usize) * w + sx as usize) * c;
                        let d = row + (ky * 3 + kx) * c;
                        cols[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * h * w, row_len), cols).expect("im2col shape")
}

fn col2im(cols: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (n, h, w, c) = dim;
    let row_len = 9 * c;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * h * w * c];
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((ni * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let d = ((ni * h + sy as usize) * w + sx as usize) * c;
                        let s = row + (ky * 3 + kx) * c;
                        for k in 0..c {
                            out[d + k] += src[s + k];
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec(dim, out).expect("col2im shape")
}

pub fn relu4(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the (post-activation) output was not positive.
pub fn relu4_backward(out: &Array4<f64>, grad: &mut Array4<f64>) {
    Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 stride-2 max pooling (floor). Returns the flat input index of each
/// selected maximum; ties resolve to the first element in scan order.
pub fn max_pool2(x: ArrayView4<f64>) -> (Array4<f64>, Vec<usize>) {
    let (n, h, w, c) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for k in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((ni * h + 2 * oy + dy) * w + 2 * ox + dx) * c + k;
                            if src[i] > best_v || best == usize::MAX {
                                best_v = src[i];
                                best = i;
                            }
                        }
                    }
                    out.push(best_v);
                    idx.push(best);
                }
            }
        }
    }
    (
        Array4::from_shape_vec((n, oh, ow, c), out).expect("pool shape"),
        idx,
    )
}

pub fn max_pool2_backward(
    d_out: ArrayView4<f64>,
    idx: &[usize],
    input_dim: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (n, h, w, c) = input_dim;
    let mut dx = vec![0.0; n * h * w * c];
    for (g, &i) in d_out.iter().zip(idx) {
        dx[i] += g;
    }
    Array4::from_shape_vec(input_dim, dx).expect("pool grad shape")
}

/// Fully connected layer; `weight` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn backward(
        &self,
        x: ArrayView1<f64>,
        d_out: ArrayView1<f64>,
        grad: Option<&mut Dense>,
    ) -> Array1<f64> {
        if let Some(g) = grad {
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    g.weight.row_mut(i).scaled_add(xi, &d_out);
                }
            }
            g.bias += &d_out;
        }
        self.weight.dot(&d_out)
    }
}

/// Gated recurrent unit with separate input and recurrent biases and the
/// reset gate applied after the recurrent projection. Gate blocks in the
/// kernels are ordered update, reset, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    /// `inputs x 3U`
    pub kernel: Array2<f64>,
    /// `U x 3U`
    pub recurrent_kernel: Array2<f64>,
    pub input_bias: Array1<f64>,
    pub recurrent_bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    inputs: Array2<f64>,
    /// `(T + 1) x U`, row 0 is the zero initial state
    states: Array2<f64>,
    update: Array2<f64>,
    reset: Array2<f64>,
    candidate: Array2<f64>,
    /// recurrent projection of the candidate block, before the reset gate
    recurrent_candidate: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Gru {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        Self {
            kernel: Array2::zeros((inputs, 3 * units)),
            recurrent_kernel: Array2::zeros((units, 3 * units)),
            input_bias: Array1::zeros(3 * units),
            recurrent_bias: Array1::zeros(3 * units),
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent_kernel.nrows()
    }

    /// Runs the sequence `x` (`T x inputs`) and returns the final state.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array1<f64>, GruCache) {
        let u = self.units();
        let t_len = x.nrows();
        let projected = x.dot(&self.kernel) + &self.input_bias;
        let mut states = Array2::zeros((t_len + 1, u));
        let mut update = Array2::zeros((t_len, u));
        let mut reset = Array2::zeros((t_len, u));
        let mut candidate = Array2::zeros((t_len, u));
        let mut recurrent_candidate = Array2::zeros((t_len, u));
        for t in 0..t_len {
            let h_prev = states.row(t).to_owned();
            let rec = h_prev.dot(&self.recurrent_kernel) + &self.recurrent_bias;
            let xp = projected.row(t);
            for j in 0..u {
                let z = sigmoid(xp[j] + rec[j]);
                let r = sigmoid(xp[u + j] + rec[u + j]);
                let n = (xp[2 * u + j] + r * rec[2 * u + j]).tanh();
                update[[t, j]] = z;
                reset[[t, j]] = r;
                candidate[[t, j]] = n;
                recurrent_candidate[[t, j]] = rec[2 * u + j];
                states[[t + 1, j]] = z * h_prev[j] + (1.0 - z) * n;
            }
        }
        let last = states.row(t_len).to_owned();
        (
            last,
            GruCache {
                inputs: x.to_owned(),
                states,
                update,
                reset,
                candidate,
                recurrent_candidate,
            },
        )
    }

    /// Backpropagates a gradient on the final state through time. Returns the
    /// gradient with respect to the input sequence.
    pub fn backward(&self, cache: &GruCache, d_last: ArrayView1<f64>, grad: Option<&mut Gru>) -> Array2<f64> {
        let u = self.units();
        let t_len = cache.inputs.nrows();
        let mut g_in = Array2::zeros((t_len, 3 * u));
        let mut g_rec = Array2::zeros((t_len, 3 * u));
        let mut dh = d_last.to_owned();
        for t in (0..t_len).rev() {
            let mut dh_prev = Array1::zeros(u);
            for j in 0..u {
                let z = cache.update[[t, j]];
                let r = cache.reset[[t, j]];
                let n = cache.candidate[[t, j]];
                let h_prev = cache.states[[t, j]];
                let dz = dh[j] * (h_prev - n);
                let dn = dh[j] * (1.0 - z);
                dh_prev[j] = dh[j] * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * cache.recurrent_candidate[[t, j]];
                let daz = dz * z * (1.0 - z);
                let dar = dr * r * (1.0 - r);
                g_in[[t, j]] = daz;
                g_in[[t, u + j]] = dar;
                g_in[[t, 2 * u + j]] = dan;
                g_rec[[t, j]] = daz;
                g_rec[[t, u + j]] = dar;
                g_rec[[t, 2 * u + j]] = dan * r;
            }
            dh_prev += &self.recurrent_kernel.dot(&g_rec.row(t));
            dh = dh_prev;
        }
        if let Some(g) = grad {
            g.kernel += &cache.inputs.t().dot(&g_in);
            let prev_states = cache.states.slice(ndarray::s![..t_len, ..]);
            g.recurrent_kernel += &prev_states.t().dot(&g_rec);
            g.input_bias += &g_in.sum_axis(Axis(0));
            g.recurrent_bias += &g_rec.sum_axis(Axis(0));
        }
        g_in.dot(&self.kernel.t())
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    /// Direct 3x3 same-padding convolution, independent of im2col.
    fn conv_direct(conv: &Conv2d, x: &Array4<f64>) -> Array4<f64> {
        let (n, h, w, c_in) = x.dim();
        let c_out = conv.out_channels();
        Array4::from_shape_fn((n, h, w, c_out), |(ni, y, xx, k)| {
            let mut acc = conv.bias[k];
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    let sx = xx as isize + kx as isize - 1;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += conv.weight[[ky, kx, ci, k]] * x[[ni, sy as usize, sx as usize, ci]];
                    }
                }
            }
            acc
        })
    }

    fn pseudo(len: usize, salt: f64) -> Vec<f64> {
        (0..len).map(|i| (i as f64 * 0.37 + salt).sin() * 0.8).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut conv = Conv2d::zeros(2, 3);
        conv.weight = Array::from_shape_vec((3, 3, 2, 3), pseudo(54, 0.1)).unwrap();
        conv.bias = array![0.1, -0.2, 0.3];
        let x = Array::from_shape_vec((2, 4, 5, 2), pseudo(80, 1.3)).unwrap();
        let (out, _) = conv.forward(x.view());
        let expected = conv_direct(&conv, &x);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x) - b, y> == <x, conv^T(y)> for the linear part
        let mut conv = Conv2d::zeros(2, 3);
        conv.weight = Array::from_shape_vec((3, 3, 2, 3), pseudo(54, 0.4)).unwrap();
        let x = Array::from_shape_vec((1, 4, 4, 2), pseudo(32, 2.0)).unwrap();
        let y = Array::from_shape_vec((1, 4, 4, 3), pseudo(48, 3.0)).unwrap();
        let (out, cols) = conv.forward(x.view());
        let dx = conv.backward(&cols, x.dim(), y.view(), None, true).unwrap();
        let lhs: f64 = out.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(dx.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_picks_first_maximum_and_routes_gradient() {
        let x = Array::from_shape_vec((1, 2, 2, 1), vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (out, idx) = max_pool2(x.view());
        assert_eq!(out[[0, 0, 0, 0]], 3.0);
        assert_eq!(idx, vec![1]);
        let d = max_pool2_backward(Array4::from_elem((1, 1, 1, 1), 2.0).view(), &idx, x.dim());
        assert_eq!(d.into_raw_vec_and_offset().0, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(array![1000.0, 1001.0, -5.0].view());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gru_with_zero_weights_keeps_half_of_candidate() {
        // zero weights: z = r = 0.5, n = 0, so the state stays at zero
        let gru = Gru::zeros(3, 2);
        let x = Array2::from_elem((4, 3), 0.5);
        let (h, _) = gru.forward(x.view());
        assert_eq!(h, Array1::<f64>::zeros(2));
    }
}
