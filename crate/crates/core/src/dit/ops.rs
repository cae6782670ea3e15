//! Dense kernels on row-major `f64` slices. Weight matrices are stored
//! `in x out`, so a linear layer is `y = x W + b` with tokens as rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sqrt, PI};

pub(crate) const LN_EPS: f64 = 1e-6;

/// `y[n x dout] = x[n x din] W[din x dout] + b`.
pub(crate) fn linear(x: &[f64], n: usize, w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let row = &mut y[i * dout..(i + 1) * dout];
        row.copy_from_slice(b);
        for (k, &xv) in x[i * din..(i + 1) * din].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[k * dout..(k + 1) * dout]) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// Accumulates `dW += x^T dy`, `db += sum_rows dy`; returns `dx = dy W^T`
/// when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    w: &[f64],
    din: usize,
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    for i in 0..n {
        let dyr = &dy[i * dout..(i + 1) * dout];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        for (k, &xv) in x[i * din..(i + 1) * din].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (d, &g) in dw[k * dout..(k + 1) * dout].iter_mut().zip(dyr) {
                *d += xv * g;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        let dyr = &dy[i * dout..(i + 1) * dout];
        for k in 0..din {
            let wr = &w[k * dout..(k + 1) * dout];
            dx[i * din + k] = wr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        }
    }
    Some(dx)
}

/// Row-wise LayerNorm without affine parameters. Returns normalized rows and
/// the per-row reciprocal standard deviation.
pub(crate) fn layer_norm(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / sqrt(var + LN_EPS);
        rstd[i] = r;
        for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
    }
    (out, rstd)
}

pub(crate) fn layer_norm_backward(normed: &[f64], rstd: &[f64], dn: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let nr = &normed[i * d..(i + 1) * d];
        let gr = &dn[i * d..(i + 1) * d];
        let mean_g = gr.iter().sum::<f64>() / d as f64;
        let mean_gn = gr.iter().zip(nr).map(|(g, v)| g * v).sum::<f64>() / d as f64;
        for ((o, g), v) in dx[i * d..(i + 1) * d].iter_mut().zip(gr).zip(nr) {
            *o = rstd[i] * (g - mean_g - v * mean_gn);
        }
    }
    dx
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + libm::exp(-x))
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + libm::exp(-x));
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.044_715;

fn gelu_k() -> f64 {
    sqrt(2.0 / PI)
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(gelu_k() * (x + GELU_C * x * x * x)))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let k = gelu_k();
    let t = libm::tanh(k * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - m);
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// `(1 + scale) * x + shift` applied to every row.
pub(crate) fn modulate(x: &[f64], shift: &[f64], scale: &[f64], d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        for ((v, s), sc) in row.iter_mut().zip(shift).zip(scale) {
            *v = *v * (1.0 + sc) + s;
        }
    }
    out
}

/// Backward of [`modulate`]: returns `d normed` and accumulates
/// `d shift`, `d scale`.
pub(crate) fn modulate_backward(
    normed: &[f64],
    dy: &[f64],
    scale: &[f64],
    d: usize,
    dshift: &mut [f64],
    dscale: &mut [f64],
) -> Vec<f64> {
    let mut dn = dy.to_vec();
    for (row, (dyr, nr)) in dn.chunks_mut(d).zip(dy.chunks(d).zip(normed.chunks(d))) {
        for j in 0..d {
            dshift[j] += dyr[j];
            dscale[j] += dyr[j] * nr[j];
            row[j] = dyr[j] * (1.0 + scale[j]);
        }
    }
    dn
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0];
        let (n, _) = layer_norm(&x, 2, 4);
        for row in n.chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
        let (c, _) = layer_norm(&[3.0; 4], 1, 4);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut r = [1000.0, 999.0, -5.0];
        softmax(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut z = [0.0; 5];
        softmax(&mut z);
        assert!(z.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn linear_matches_hand_product() {
        // x = [1 2], W = [[1 0 2], [0 1 3]], b = [0.5 0 0]
        let y = linear(&[1.0, 2.0], 1, &[1.0, 0.0, 2.0, 0.0, 1.0, 3.0], &[0.5, 0.0, 0.0], 2, 3);
        assert_eq!(y, vec![1.5, 2.0, 8.0]);
    }
}
