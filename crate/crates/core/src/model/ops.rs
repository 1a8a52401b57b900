//! Dense kernels used by the velocity network: strided GEMM, layer norm,
//! GELU, softmax and their derivatives. All buffers are row-major.

/// Row-major matrix view: `rows × cols` with an explicit row stride.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, stride: cols }
    }

    /// Sub-block starting at `(row, col)`.
    pub fn block(self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        debug_assert!(row + rows <= self.rows && col + cols <= self.cols);
        let start = row * self.stride + col;
        let end = if rows == 0 { start } else { start + (rows - 1) * self.stride + cols };
        Self { data: &self.data[start..end], rows, cols, stride: self.stride }
    }
}

/// Mutable row-major matrix view.
pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, stride: cols }
    }

    pub fn block(self, row: usize, col: usize, rows: usize, cols: usize) -> MatMut<'a> {
        debug_assert!(row + rows <= self.rows && col + cols <= self.cols);
        let start = row * self.stride + col;
        let end = if rows == 0 { start } else { start + (rows - 1) * self.stride + cols };
        MatMut { data: &mut self.data[start..end], rows, cols, stride: self.stride }
    }
}

/// `C ← alpha·op(A)·op(B) + beta·C` where `op` optionally transposes.
pub(crate) fn gemm(alpha: f64, a: Mat, trans_a: bool, b: Mat, trans_b: bool, beta: f64, c: MatMut) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.stride) } else { (a.stride, 1) };
    let (rsb, csb) = if trans_b { (1, b.stride) } else { (b.stride, 1) };
    // SAFETY: the views were bounds-checked on construction and the strides
    // describe exactly those views; `c` is an exclusive borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.stride as isize,
            1,
        );
    }
}

/// `Y = X·W + b` for `X: n × d_in`, `W: d_in × d_out`.
pub(crate) fn affine(x: &[f64], n: usize, d_in: usize, w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(1.0, Mat::new(x, n, d_in), false, Mat::new(w, d_in, d_out), false, 1.0, MatMut::new(&mut y, n, d_out));
    y
}

pub(crate) fn add_column_sums(dy: &[f64], cols: usize, out: &mut [f64]) {
    for row in dy.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dgain`/`dbias` when given.
pub(crate) fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    gain: &[f64],
    cache: &NormCache,
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    if let Some((dg, db)) = grads {
        for r in 0..n {
            for j in 0..d {
                dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
                db[j] += dy[r * d + j];
            }
        }
    }
    let inv_d = 1.0 / d as f64;
    for r in 0..n {
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..d {
            let g = dy[r * d + j] * gain[j];
            s1 += g;
            s2 += g * cache.xhat[r * d + j];
        }
        let rs = cache.rstd[r];
        for j in 0..d {
            let g = dy[r * d + j] * gain[j];
            dx[r * d + j] = rs * (g - s1 * inv_d - cache.xhat[r * d + j] * s2 * inv_d);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// In-place row softmax over `cols`-wide rows.
pub(crate) fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Turns `dp` (gradient w.r.t. probabilities) into the gradient w.r.t. the
/// pre-softmax scores, in place.
pub(crate) fn softmax_rows_backward(p: &[f64], dp: &mut [f64], cols: usize) {
    for (prow, drow) in p.chunks_exact(cols).zip(dp.chunks_exact_mut(cols)) {
        let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
        for (d, &pv) in drow.iter_mut().zip(prow) {
            *d = pv * (*d - dot);
        }
    }
}

/// Sinusoidal features of a scalar, `dim` wide (sines then cosines).
pub(crate) fn sinusoidal(value: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out[i] = (value * freq).sin();
        out[half + i] = (value * freq).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(1.0, Mat::new(&a, 2, 2), true, Mat::new(&b, 2, 2), false, 0.0, MatMut::new(&mut c, 2, 2));
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(1.0, Mat::new(&a, 2, 2), false, Mat::new(&b, 2, 2), true, 0.0, MatMut::new(&mut c, 2, 2));
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn gemm_on_blocks() {
        let a: Vec<f64> = (0..12).map(|v| v as f64).collect(); // 3×4
        let eye = [1.0, 0.0, 0.0, 1.0];
        let mut c = vec![0.0; 4];
        let blk = Mat::new(&a, 3, 4).block(1, 2, 2, 2);
        gemm(1.0, blk, false, Mat::new(&eye, 2, 2), false, 0.0, MatMut::new(&mut c, 2, 2));
        assert_eq!(c, vec![6.0, 7.0, 10.0, 11.0]);
    }

    #[test]
    fn activation_derivatives_match_differences() {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut s = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0];
        softmax_rows(&mut s, 3);
        assert!((s[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((s[5] - 1.0).abs() < 1e-15);
    }
}
