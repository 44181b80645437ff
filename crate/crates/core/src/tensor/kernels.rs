//! Slice-level numeric kernels shared by the eager tensor functions and the tape.

use std::f64::consts::PI;

/// `c = beta * c + op(a) * op(b)` for row-major operands, where `op` optionally transposes.
///
/// `a` is stored as `m x k` (or `k x m` when `trans_a`), `b` as `k x n` (or `n x k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the row-major buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable softmax over each contiguous row of width `cols`, in place.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Softmax of a square `n x n` score matrix where row `i` only sees columns `0..=i`.
/// Masked entries are exactly zero.
pub fn causal_softmax_rows(x: &mut [f64], n: usize) {
    for (i, row) in x.chunks_exact_mut(n).enumerate() {
        let (live, masked) = row.split_at_mut(i + 1);
        let max = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in live.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in live.iter_mut() {
            *v /= sum;
        }
        masked.fill(0.0);
    }
}

/// Backward of a row softmax given its output `y` and upstream `g`; accumulates into `gx`.
pub fn softmax_rows_backward(y: &[f64], g: &[f64], gx: &mut [f64], cols: usize) {
    for ((yr, gr), gxr) in y
        .chunks_exact(cols)
        .zip(g.chunks_exact(cols))
        .zip(gx.chunks_exact_mut(cols))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in gxr.iter_mut().zip(yr).zip(gr) {
            *o += yv * (gv - dot);
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalisation. Returns per-row `(mean, 1/std)` for the backward pass.
pub fn layer_norm_rows(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    out: &mut [f64],
    cols: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mean = xr.iter().sum::<f64>() / cols as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..cols {
            or[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (means, rstds)
}

const GELU_C: f64 = 0.044_715;

fn gelu_k() -> f64 {
    (2.0 / PI).sqrt()
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    let u = gelu_k() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let k = gelu_k();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}
