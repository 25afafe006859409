//! Shared numerical kernels: batch covariance, PSD log-determinant via
//! Cholesky, cosine similarity, central-difference gradient checking and
//! log-log least-squares power-law fitting.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Symmetric positive semidefinite covariance matrix.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub gamma: Array2<f64>,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Population covariance of the rows of `batch`: (1/B) sum (z - mean)(z - mean)^T.
/// Dividing by B keeps the single-row case well defined (zero matrix).
pub fn covariance(batch: ArrayView2<'_, f64>) -> Result<CovMatrix> {
    let b = batch.nrows();
    let d = batch.ncols();
    if b == 0 {
        return Err(Error::invalid("covariance of an empty batch".to_string()));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for row in batch.rows() {
        mean += &row;
    }
    mean /= b as f64;
    let mut gamma = Array2::<f64>::zeros((d, d));
    for row in batch.rows() {
        let centered = &row - &mean;
        for i in 0..d {
            let ci = centered[i];
            for j in 0..d {
                gamma[(i, j)] += ci * centered[j];
            }
        }
    }
    gamma /= b as f64;
    // Explicit symmetrization removes rounding asymmetry.
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (gamma[(i, j)] + gamma[(j, i)]);
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
    }
    Ok(CovMatrix { gamma })
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix. Fails on a non-positive pivot.
pub fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::shape("cholesky expects a square matrix".to_string()));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::numerical(format!(
                        "cholesky pivot {sum:e} at index {i}"
                    )));
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the lower Cholesky factor L of A.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor.
pub fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        inv.column_mut(j).assign(&col);
    }
    // Symmetrize against rounding.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}

/// log det(I + scale * Gamma) for a PSD Gamma, computed from the Cholesky
/// factorization of the shifted matrix. Retries once with a small
/// diagonal jitter before reporting a numerical error. Always >= 0 up to
/// rounding.
pub fn logdet_psd(gamma: &CovMatrix, scale: f64) -> Result<f64> {
    if scale <= 0.0 {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let l = cholesky(&shifted(&gamma.gamma, scale, 0.0))
        .or_else(|_| cholesky(&shifted(&gamma.gamma, scale, 1e-10)))?;
    Ok(2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>())
}

/// Cholesky factor of I + scale * Gamma (+ jitter * I), symmetrized.
pub fn shifted_cholesky(gamma: &CovMatrix, scale: f64) -> Result<Array2<f64>> {
    cholesky(&shifted(&gamma.gamma, scale, 0.0))
        .or_else(|_| cholesky(&shifted(&gamma.gamma, scale, 1e-10)))
}

fn shifted(gamma: &Array2<f64>, scale: f64, jitter: f64) -> Array2<f64> {
    let n = gamma.nrows();
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (gamma[(i, j)] + gamma[(j, i)]);
            m[(i, j)] = scale * sym + if i == j { 1.0 + jitter } else { 0.0 };
        }
    }
    m
}

/// Cosine similarity a.b / (|a| |b|), in [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector".to_string()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Compare an analytic gradient against central finite differences.
/// Returns the maximum over coordinates of
/// |g_num - g_ana| / max(1, |g_num|, |g_ana|).
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "analytic gradient length differs from parameter length".to_string(),
        ));
    }
    let mut work = params.to_vec();
    let mut max_err: f64 = 0.0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work)?;
        work[i] = orig - h;
        let fm = f(&work)?;
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite evaluation at coordinate {i}"
            )));
        }
        let num = (fp - fm) / (2.0 * h);
        let ana = analytic[i];
        let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1.0);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

/// Least-squares fit of y = a * x^b in log-log space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "power-law fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::invalid(
            "power-law fit requires strictly positive coordinates".to_string(),
        ));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid(
            "degenerate design: all x values coincide".to_string(),
        ));
    }
    let sxy: f64 = lx
        .iter()
        .zip(ly.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let b = sxy / sxx;
    let a = (my - b * mx).exp();
    Ok((a, b))
}
