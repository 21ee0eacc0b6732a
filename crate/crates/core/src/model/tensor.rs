//! Row-major dense matrices and the handful of kernels the decoder needs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match its shape");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `x[n×m] · w[m×k] + b[k]`.
pub fn linear(x: &[f64], n: usize, w: &Matrix, b: &[f64]) -> Vec<f64> {
    let (m, k) = (w.rows, w.cols);
    debug_assert_eq!(x.len(), n * m);
    let mut y = Vec::with_capacity(n * k);
    for i in 0..n {
        y.extend_from_slice(b);
        let yi = &mut y[i * k..(i + 1) * k];
        for (p, &xv) in x[i * m..(i + 1) * m].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yv, &wv) in yi.iter_mut().zip(w.row(p)) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·wᵀ`.
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    w: &Matrix,
    dw: &mut Matrix,
    db: &mut [f64],
) -> Vec<f64> {
    let (m, k) = (w.rows, w.cols);
    let mut dx = vec![0.0; n * m];
    for i in 0..n {
        let dyi = &dy[i * k..(i + 1) * k];
        for (dbv, &g) in db.iter_mut().zip(dyi) {
            *dbv += g;
        }
        let xi = &x[i * m..(i + 1) * m];
        let dxi = &mut dx[i * m..(i + 1) * m];
        for p in 0..m {
            let wp = w.row(p);
            let mut acc = 0.0;
            for (&wv, &g) in wp.iter().zip(dyi) {
                acc += wv * g;
            }
            dxi[p] = acc;
            let xv = xi[p];
            if xv != 0.0 {
                for (dwv, &g) in dw.row_mut(p).iter_mut().zip(dyi) {
                    *dwv += xv * g;
                }
            }
        }
    }
    dx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalisation. Returns `(output, xhat, rstd)`.
pub fn layer_norm(x: &[f64], n: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let mut out = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (xi[j] - mean) * r;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, xhat, rstd)
}

/// Backward of [`layer_norm`]; accumulates into `dgain`/`dbias`.
pub fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let d = gain.len();
    let n = rstd.len();
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let hi = &xhat[i * d..(i + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for j in 0..d {
            dgain[j] += dyi[j] * hi[j];
            dbias[j] += dyi[j];
            let dh = dyi[j] * gain[j];
            mean_dh += dh;
            mean_dh_h += dh * hi[j];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        for j in 0..d {
            let dh = dyi[j] * gain[j];
            dx[i * d + j] = rstd[i] * (dh - mean_dh - hi[j] * mean_dh_h);
        }
    }
    dx
}

/// √(2/π), the GELU tanh-approximation scale.
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the GELU tanh approximation.
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh form: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SCALE * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_SCALE * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(x: &[f64], n: usize, w: &Matrix) -> Vec<f64> {
        let mut y = vec![0.0; n * w.cols];
        for i in 0..n {
            for j in 0..w.cols {
                for p in 0..w.rows {
                    y[i * w.cols + j] += x[i * w.rows + p] * w.get(p, j);
                }
            }
        }
        y
    }

    #[test]
    fn linear_matches_naive_product() {
        let w = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.5, 3.0]);
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 2.0];
        let y = linear(&x, 2, &w, &[0.25, -0.25]);
        let expect: Vec<f64> = naive_matmul(&x, 2, &w)
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.25 } else { -0.25 })
            .collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.3, 1.7, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let (out, _, _) = layer_norm(&x, 1, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_and_lse_agree() {
        let v = [1.0, 2.0, -3.0];
        let mut p = v;
        softmax_in_place(&mut p);
        let lse = log_sum_exp(&v);
        for (pi, vi) in p.iter().zip(v) {
            assert!((pi - (vi - lse).exp()).abs() < 1e-15);
        }
    }
}
