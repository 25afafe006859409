//! Forward and backward kernels for the fixed operator set: linear maps,
//! layer normalization, tanh-form GELU and softmax attention. Backward
//! passes accumulate into caller-provided gradient buffers so multi-view
//! losses can share one accumulator.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LN_EPS: f64 = 1e-6;

/// Truncated normal init: N(0, std) resampled until |v| <= 2 std.
pub fn trunc_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect()
}

pub fn linear_forward(x: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// dw += x^T dy, db += column sums of dy; returns dy w^T when requested.
pub fn linear_backward(
    x: ArrayView2<'_, f64>,
    w: &Array2<f64>,
    dy: ArrayView2<'_, f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
    need_dx: bool,
) -> Option<Array2<f64>> {
    *dw += &x.t().dot(&dy);
    *db += &dy.sum_axis(Axis(0));
    if need_dx {
        Some(dy.dot(&w.t()))
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layernorm_forward(x: ArrayView2<'_, f64>, ln: &LayerNorm) -> (Array2<f64>, LnCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut y = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[(i, j)] = h;
            y[(i, j)] = h * ln.gamma[j] + ln.beta[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Accumulates dgamma/dbeta and returns dx.
pub fn layernorm_backward(
    dy: ArrayView2<'_, f64>,
    ln: &LayerNorm,
    cache: &LnCache,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let g = dy[(i, j)];
            let xh = cache.xhat[(i, j)];
            dgamma[j] += g * xh;
            dbeta[j] += g;
            let dxhat = g * ln.gamma[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            let dxhat = dy[(i, j)] * ln.gamma[j];
            dx[(i, j)] = is * (dxhat - mean_dxhat - cache.xhat[(i, j)] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU, differentiable in closed form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Backward through a row-wise softmax given probabilities `p`:
/// ds = p * (dp - rowsum(dp * p)).
pub fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let (n, d) = p.dim();
    let mut ds = Array2::zeros((n, d));
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..d {
            dot += dp[(i, j)] * p[(i, j)];
        }
        for j in 0..d {
            ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - dot);
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(num, gelu_prime(x), epsilon = 1e-8);
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let ln = LayerNorm {
            gamma: Array1::from_shape_fn(5, |_| rng.random_range(0.5..1.5)),
            beta: Array1::from_shape_fn(5, |_| rng.random_range(-0.5..0.5)),
        };
        // Scalar loss: weighted sum of outputs.
        let wgt = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let loss = |x: &Array2<f64>| {
            let (y, _) = layernorm_forward(x.view(), &ln);
            (y * &wgt).sum()
        };
        let (_, cache) = layernorm_forward(x.view(), &ln);
        let mut dg = Array1::zeros(5);
        let mut db = Array1::zeros(5);
        let dx = layernorm_backward(wgt.view(), &ln, &cache, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[(i, j)] += h;
                let mut xm = x.clone();
                xm[(i, j)] -= h;
                let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert_abs_diff_eq!(num, dx[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]];
        softmax_rows(&mut x);
        for row in x.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn trunc_normal_stays_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vals = trunc_normal(&mut rng, 0.02, 10_000);
        assert!(vals.iter().all(|v| v.abs() <= 0.04));
    }
}
