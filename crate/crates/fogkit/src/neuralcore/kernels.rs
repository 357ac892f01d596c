//! Low-level numeric kernels on flat f64 buffers.
//!
//! Activations are laid out channel-major (`[ch][time]`) so convolutions
//! become GEMMs over im2col patches; the GEMM itself goes through ndarray
//! (matrixmultiply underneath).

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `c[m x n] = a[m x k] . b[k x n] + beta * c`, all row-major.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    let a = ArrayView2::from_shape((m, k), a).expect("gemm: a shape");
    let b = ArrayView2::from_shape((k, n), b).expect("gemm: b shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm: c shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

/// `c[m x n] += a[m x k] . b^T` where `b` is `[n x k]` row-major.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    let a = ArrayView2::from_shape((m, k), a).expect("gemm_nt: a shape");
    let b = ArrayView2::from_shape((n, k), b).expect("gemm_nt: b shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm_nt: c shape");
    general_mat_mul(1.0, &a, &b.t(), beta, &mut c);
}

/// `c[m x n] += a^T . b` where `a` is `[k x m]` row-major.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    let a = ArrayView2::from_shape((k, m), a).expect("gemm_tn: a shape");
    let b = ArrayView2::from_shape((k, n), b).expect("gemm_tn: b shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm_tn: c shape");
    general_mat_mul(1.0, &a.t(), &b, beta, &mut c);
}

/// Unfold `x` (`[in_ch][in_len]`) into `cols` (`[in_ch*kernel][out_len]`)
/// where row `i*kernel + k` is `x[i][k .. k + out_len]`.
pub fn im2col(x: &[f64], in_ch: usize, in_len: usize, kernel: usize, cols: &mut Vec<f64>) {
    let out_len = in_len - kernel + 1;
    cols.clear();
    cols.reserve(in_ch * kernel * out_len);
    for i in 0..in_ch {
        let row = &x[i * in_len..(i + 1) * in_len];
        for k in 0..kernel {
            cols.extend_from_slice(&row[k..k + out_len]);
        }
    }
}

/// Scatter-add the im2col adjoint back onto `dx` (`[in_ch][in_len]`).
pub fn col2im_add(dcols: &[f64], in_ch: usize, in_len: usize, kernel: usize, dx: &mut [f64]) {
    let out_len = in_len - kernel + 1;
    for i in 0..in_ch {
        let drow = &mut dx[i * in_len..(i + 1) * in_len];
        for k in 0..kernel {
            let src = &dcols[(i * kernel + k) * out_len..(i * kernel + k + 1) * out_len];
            for (d, s) in drow[k..k + out_len].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// Valid-padding conv forward. Fills `cols` (kept for backward) and `z`
/// (`[out_ch][out_len]`, pre-activation with bias added).
pub fn conv_forward(
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    x: &[f64],
    in_len: usize,
    cols: &mut Vec<f64>,
    z: &mut Vec<f64>,
) {
    let out_len = in_len - kernel + 1;
    im2col(x, in_ch, in_len, kernel, cols);
    z.clear();
    z.reserve(out_ch * out_len);
    for o in 0..out_ch {
        for _ in 0..out_len {
            z.push(b[o]);
        }
    }
    gemm(out_ch, in_ch * kernel, out_len, w, cols, 1.0, z);
}

/// Conv backward given upstream `dz` (`[out_ch][out_len]`) and the cached
/// `cols`. Accumulates into `dw`/`db`; when `dx` is given, also accumulates
/// the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    w: &[f64],
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    in_len: usize,
    cols: &[f64],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
    dcols_buf: &mut Vec<f64>,
) {
    let out_len = in_len - kernel + 1;
    // dW += dz . cols^T
    gemm_nt(out_ch, out_len, in_ch * kernel, dz, cols, 1.0, dw);
    for o in 0..out_ch {
        db[o] += dz[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
    }
    if let Some(dx) = dx {
        dcols_buf.clear();
        dcols_buf.resize(in_ch * kernel * out_len, 0.0);
        // dcols = W^T . dz
        gemm_tn(in_ch * kernel, out_ch, out_len, w, dz, 0.0, dcols_buf);
        col2im_add(dcols_buf, in_ch, in_len, kernel, dx);
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `dz = da * [a > 0]`, writing through `da` in place given the post-ReLU
/// activation `a`.
pub fn relu_backward_inplace(da: &mut [f64], a: &[f64]) {
    for (d, &act) in da.iter_mut().zip(a) {
        if act <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Max-pool each channel with the given window, dropping any tail shorter
/// than `pool`. `arg` records the within-window offset of each maximum.
pub fn maxpool_forward(
    x: &[f64],
    ch: usize,
    len: usize,
    pool: usize,
    out: &mut Vec<f64>,
    arg: &mut Vec<u8>,
) {
    let out_len = len / pool;
    out.clear();
    arg.clear();
    for c in 0..ch {
        let row = &x[c * len..(c + 1) * len];
        for t in 0..out_len {
            let base = t * pool;
            let mut best = 0usize;
            for k in 1..pool {
                if row[base + k] > row[base + best] {
                    best = k;
                }
            }
            out.push(row[base + best]);
            arg.push(best as u8);
        }
    }
}

/// Route pooled gradients back to the argmax positions; `dx` must be
/// zero-initialized (or hold an accumulation target).
pub fn maxpool_backward(dout: &[f64], arg: &[u8], ch: usize, len: usize, pool: usize, dx: &mut [f64]) {
    let out_len = len / pool;
    for c in 0..ch {
        for t in 0..out_len {
            let idx = c * out_len + t;
            dx[c * len + t * pool + arg[idx] as usize] += dout[idx];
        }
    }
}

/// Global average pool over time: `out[c] = mean_t x[c][t]`.
pub fn gap_forward(x: &[f64], ch: usize, len: usize, out: &mut Vec<f64>) {
    out.clear();
    for c in 0..ch {
        out.push(x[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64);
    }
}

pub fn gap_backward(dout: &[f64], ch: usize, len: usize, dx: &mut [f64]) {
    for c in 0..ch {
        let g = dout[c] / len as f64;
        for t in 0..len {
            dx[c * len + t] += g;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = W x + b` for a row-major `[out][in]` dense layer.
pub fn dense_forward(w: &[f64], b: &[f64], out_dim: usize, in_dim: usize, x: &[f64], y: &mut Vec<f64>) {
    y.clear();
    for j in 0..out_dim {
        y.push(b[j] + dot(&w[j * in_dim..(j + 1) * in_dim], x));
    }
}

pub fn dense_backward(
    w: &[f64],
    out_dim: usize,
    in_dim: usize,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for j in 0..out_dim {
        let g = dy[j];
        db[j] += g;
        let row = &mut dw[j * in_dim..(j + 1) * in_dim];
        for (d, &xi) in row.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for j in 0..out_dim {
            let g = dy[j];
            let row = &w[j * in_dim..(j + 1) * in_dim];
            for (d, &wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_matches_direct_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out_ch, in_ch, kernel, in_len) = (4, 3, 3, 17);
        let w: Vec<f64> = (0..out_ch * in_ch * kernel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..out_ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..in_ch * in_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cols = Vec::new();
        let mut z = Vec::new();
        conv_forward(&w, &b, out_ch, in_ch, kernel, &x, in_len, &mut cols, &mut z);

        let out_len = in_len - kernel + 1;
        for o in 0..out_ch {
            for t in 0..out_len {
                let mut want = b[o];
                for i in 0..in_ch {
                    for k in 0..kernel {
                        want += w[(o * in_ch + i) * kernel + k] * x[i * in_len + t + k];
                    }
                }
                let got = z[o * out_len + t];
                assert!((got - want).abs() < 1e-12, "o={o} t={t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn identity_kernel_passes_channel_sum() {
        // One filter, kernel [0,1,0] per input channel, zero bias: the
        // valid-padding output is the channel sum shifted by one sample.
        let (in_ch, in_len, kernel) = (3, 10, 3);
        let mut w = vec![0.0; in_ch * kernel];
        for i in 0..in_ch {
            w[i * kernel + 1] = 1.0;
        }
        let x: Vec<f64> = (0..in_ch * in_len).map(|i| i as f64).collect();
        let mut cols = Vec::new();
        let mut z = Vec::new();
        conv_forward(&w, &[0.0], 1, in_ch, kernel, &x, in_len, &mut cols, &mut z);
        let out_len = in_len - kernel + 1;
        assert_eq!(z.len(), out_len);
        for t in 0..out_len {
            let want: f64 = (0..in_ch).map(|i| x[i * in_len + t + 1]).sum();
            assert!((z[t] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_round_trip_routes_gradient_to_argmax() {
        let x = vec![1.0, 5.0, 2.0, 2.0, 9.0, 0.0, 3.0]; // one channel, len 7, pool 2 -> tail dropped
        let mut out = Vec::new();
        let mut arg = Vec::new();
        maxpool_forward(&x, 1, 7, 2, &mut out, &mut arg);
        assert_eq!(out, vec![5.0, 2.0, 9.0]);
        let mut dx = vec![0.0; 7];
        maxpool_backward(&[1.0, 1.0, 1.0], &arg, 1, 7, 2, &mut dx);
        assert_eq!(dx, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_is_channel_mean() {
        let x = vec![1.0, 2.0, 3.0, 4.0, -1.0, 1.0];
        let mut out = Vec::new();
        gap_forward(&x, 2, 3, &mut out);
        assert_eq!(out, vec![2.0, 4.0 / 3.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (in_ch, in_len, kernel) = (2, 11, 3);
        let out_len = in_len - kernel + 1;
        let x: Vec<f64> = (0..in_ch * in_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..in_ch * kernel * out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = Vec::new();
        im2col(&x, in_ch, in_len, kernel, &mut cols);
        let lhs = dot(&cols, &y);
        let mut back = vec![0.0; in_ch * in_len];
        col2im_add(&y, in_ch, in_len, kernel, &mut back);
        let rhs = dot(&x, &back);
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
