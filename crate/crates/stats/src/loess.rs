//! Local linear regression with tricube weights.

use serde::{Deserialize, Serialize};

use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoessFit {
    pub span: f64,
    pub grid: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Grid points where the local design was singular and the weighted
    /// local mean was used instead.
    pub degenerate: Vec<bool>,
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// Evaluates a degree-1 LOESS smooth of (x, y) at each grid point.
///
/// The window holds the q = ⌊span·n⌋ nearest points (at least 2); the
/// bandwidth is the q-th smallest distance and weights are tricube of the
/// scaled distance.
pub fn loess(x: &[f64], y: &[f64], grid: &[f64], span: f64) -> Result<LoessFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(format!("{} vs {}", x.len(), y.len())));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(StatsError::Param(format!("span {span} not in (0, 1]")));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    if x.iter().chain(y).chain(grid).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("loess input".into()));
    }
    let q = ((span * n as f64).floor() as usize).clamp(2, n);
    let mut fitted = Vec::with_capacity(grid.len());
    let mut degenerate = Vec::with_capacity(grid.len());
    let mut dist = vec![0.0; n];
    for &x0 in grid {
        for (d, xi) in dist.iter_mut().zip(x) {
            *d = (xi - x0).abs();
        }
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let h = sorted[q - 1];
        let w: Vec<f64> = dist
            .iter()
            .map(|&d| if h > 0.0 { tricube(d / h) } else if d == 0.0 { 1.0 } else { 0.0 })
            .collect();
        let (value, singular) = local_linear(x, y, &w, x0);
        fitted.push(value);
        degenerate.push(singular);
    }
    Ok(LoessFit { span, grid: grid.to_vec(), fitted, degenerate })
}

/// Weighted least-squares line evaluated at x0, centred on the weighted mean
/// of x. Falls back to the weighted mean of y when x has no weighted spread.
fn local_linear(x: &[f64], y: &[f64], w: &[f64], x0: f64) -> (f64, bool) {
    let sw: f64 = w.iter().sum();
    let xbar = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ybar = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..x.len() {
        let dx = x[i] - xbar;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (y[i] - ybar);
    }
    let scale = w.iter().zip(x).map(|(w, x)| w * x * x).sum::<f64>();
    if sxx <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return (ybar, true);
    }
    (ybar + sxy / sxx * (x0 - xbar), false)
}
