//! Least squares through a Householder QR factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::StatsError;

/// Relative size below which a column counts as linearly dependent on the
/// columns before it.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Builds an n×k design from columns, optionally with a leading intercept.
pub fn design(columns: &[&[f64]], intercept: bool) -> Result<DMatrix<f64>, StatsError> {
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(StatsError::Length("design columns differ in length".into()));
    }
    let k = columns.len() + intercept as usize;
    Ok(DMatrix::from_fn(n, k, |i, j| {
        if intercept && j == 0 {
            1.0
        } else {
            columns[j - intercept as usize][i]
        }
    }))
}

/// Indices of columns that are not (numerically) in the span of the columns
/// before them. Without pivoting, |R_jj| is the norm of column j's component
/// orthogonal to the earlier columns.
pub fn independent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return Vec::new();
    }
    let r = x.clone().qr().r();
    (0..x.ncols().min(x.nrows()))
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm > 0.0 && r[(j, j)].abs() > RANK_TOLERANCE * norm
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub ssr: f64,
    /// Total sum of squares around the mean of y.
    pub sst: f64,
    pub r2: f64,
    pub adj_r2: Option<f64>,
}

/// Least squares for a full-column-rank design.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit, StatsError> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(StatsError::Length(format!("design has {n} rows, y has {}", y.len())));
    }
    if n < k || n == 0 {
        return Err(StatsError::TooFew { need: k.max(1), got: n });
    }
    let rank = independent_columns(x).len();
    if rank < k {
        return Err(StatsError::RankDeficient { rank, cols: k });
    }
    let yv = DVector::from_column_slice(y);
    let coefficients: Vec<f64> = if k == 0 {
        Vec::new()
    } else {
        let qr = x.clone().qr();
        let qty = qr.q().transpose() * &yv;
        let beta = qr
            .r()
            .solve_upper_triangular(&qty)
            .ok_or(StatsError::RankDeficient { rank, cols: k })?;
        beta.iter().copied().collect()
    };
    let fitted: Vec<f64> = (0..n).map(|i| (0..k).map(|j| x[(i, j)] * coefficients[j]).sum()).collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    // Adjusted R² assumes the design carries an intercept among its k columns.
    let adj_r2 = (n > k && sst > 0.0).then(|| 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - k) as f64);
    Ok(OlsFit { coefficients, fitted, residuals, n, k, ssr, sst, r2, adj_r2 })
}

/// Least squares after dropping dependent columns. Returns the fit and the
/// kept column indices.
pub fn ols_dropping(x: &DMatrix<f64>, y: &[f64]) -> Result<(OlsFit, Vec<usize>), StatsError> {
    let keep = independent_columns(x);
    let sub = x.select_columns(keep.iter());
    Ok((ols(&sub, y)?, keep))
}
