//! One-dimensional accumulated local effects.

use serde::{Deserialize, Serialize};

use crate::bootstrap::quantile_sorted;
use crate::StatsError;

pub const DEFAULT_BINS: usize = 10;

/// Differences smaller than this count as no direction.
const DIRECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature: usize,
    /// Bin edges; the curve is evaluated at each edge.
    pub grid: Vec<f64>,
    /// Centred so that the row-weighted mean over bins is 0.
    pub values: Vec<f64>,
    /// Rows per bin (one fewer entry than the grid).
    pub counts: Vec<usize>,
    /// Sign of the last value minus the first: -1, 0 or 1.
    pub direction: i8,
    pub requested_bins: usize,
    /// Duplicate quantile edges or empty bins were merged away.
    pub merged: bool,
}

/// Bin k covers (z_{k-1}, z_k]; the first bin also holds z_0.
fn bin_of(grid: &[f64], v: f64) -> usize {
    let k = grid.partition_point(|&z| z < v);
    k.clamp(1, grid.len() - 1) - 1
}

pub fn ale_1d<F>(model: F, x: &[Vec<f64>], feature: usize, n_bins: usize) -> Result<AleCurve, StatsError>
where
    F: Fn(&[f64]) -> f64,
{
    if n_bins == 0 {
        return Err(StatsError::Param("n_bins must be positive".into()));
    }
    if x.iter().any(|r| feature >= r.len()) {
        return Err(StatsError::Dimension { expected: feature + 1, got: x.iter().map(Vec::len).min().unwrap_or(0) });
    }
    let mut col: Vec<f64> = x.iter().map(|r| r[feature]).collect();
    if col.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(format!("feature {feature}")));
    }
    col.sort_by(f64::total_cmp);
    col.dedup();
    if col.len() < 2 {
        return Err(StatsError::Constant { feature });
    }
    let mut sorted: Vec<f64> = x.iter().map(|r| r[feature]).collect();
    sorted.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = (0..=n_bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64).expect("non-empty"))
        .collect();
    grid.dedup();
    let mut merged = grid.len() != n_bins + 1;

    // Drop the upper edge of any empty bin, which joins it to the next one.
    let counts = loop {
        let mut counts = vec![0usize; grid.len() - 1];
        for r in x {
            counts[bin_of(&grid, r[feature])] += 1;
        }
        match counts.iter().position(|&c| c == 0) {
            Some(k) => {
                let drop = if k + 1 < grid.len() - 1 { k + 1 } else { k };
                grid.remove(drop);
                merged = true;
            }
            None => break counts,
        }
    };

    let mut delta = vec![0.0; counts.len()];
    let mut buf = vec![0.0; x[0].len()];
    for r in x {
        let k = bin_of(&grid, r[feature]);
        buf.clear();
        buf.extend_from_slice(r);
        buf[feature] = grid[k + 1];
        let hi = model(&buf);
        buf[feature] = grid[k];
        let lo = model(&buf);
        delta[k] += hi - lo;
    }
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    for (d, &c) in delta.iter().zip(&counts) {
        let prev = *values.last().unwrap();
        values.push(prev + d / c as f64);
    }
    let n = x.len() as f64;
    let centre: f64 = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * (values[k] + values[k + 1]) / 2.0)
        .sum::<f64>()
        / n;
    for v in &mut values {
        *v -= centre;
    }
    let diff = values[values.len() - 1] - values[0];
    let direction = if diff > DIRECTION_TOL {
        1
    } else if diff < -DIRECTION_TOL {
        -1
    } else {
        0
    };
    Ok(AleCurve { feature, grid, values, counts, direction, requested_bins: n_bins, merged })
}
