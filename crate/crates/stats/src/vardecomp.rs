//! Two-way variance decomposition of a row × column matrix.

use serde::{Deserialize, Serialize};

use crate::fe::{alternating_demean, DemeanOptions};
use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_cells: usize,
    /// False when some cells were missing and the additive model was fitted
    /// by alternating projections.
    pub balanced: bool,
    pub ss_total: f64,
    pub ss_rows: f64,
    pub ss_cols: f64,
    pub ss_interaction: f64,
    /// Shares of the total; `None` when the total is zero.
    pub shares: Option<[f64; 3]>,
}

impl VarianceDecomposition {
    pub fn degenerate(&self) -> bool {
        self.shares.is_none()
    }
}

/// Decomposes the spread of `m[i][j]` around the grand mean into row, column
/// and interaction sums of squares. `None` cells are excluded.
pub fn variance_decomposition(m: &[Vec<Option<f64>>]) -> Result<VarianceDecomposition, StatsError> {
    let n_rows = m.len();
    let n_cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != n_cols) {
        return Err(StatsError::Length("ragged matrix".into()));
    }
    // Rows and columns with no observed cell carry no information.
    let live_rows: Vec<usize> = (0..n_rows).filter(|&i| m[i].iter().any(Option::is_some)).collect();
    let live_cols: Vec<usize> = (0..n_cols).filter(|&j| m.iter().any(|r| r[j].is_some())).collect();
    if live_rows.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: live_rows.len() });
    }
    if live_cols.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: live_cols.len() });
    }
    let mut cells = Vec::new();
    for (ri, &i) in live_rows.iter().enumerate() {
        for (ci, &j) in live_cols.iter().enumerate() {
            if let Some(v) = m[i][j] {
                if !v.is_finite() {
                    return Err(StatsError::NonFinite(format!("cell ({i}, {j})")));
                }
                cells.push((ri, ci, v));
            }
        }
    }
    let (r, c) = (live_rows.len(), live_cols.len());
    let balanced = cells.len() == r * c;
    let n = cells.len() as f64;
    let grand = cells.iter().map(|t| t.2).sum::<f64>() / n;
    let ss_total: f64 = cells.iter().map(|t| (t.2 - grand).powi(2)).sum();

    let (ss_rows, ss_cols, ss_interaction) = if balanced {
        let mut row_mean = vec![0.0; r];
        let mut col_mean = vec![0.0; c];
        for &(i, j, v) in &cells {
            row_mean[i] += v / c as f64;
            col_mean[j] += v / r as f64;
        }
        let ss_rows = c as f64 * row_mean.iter().map(|a| (a - grand).powi(2)).sum::<f64>();
        let ss_cols = r as f64 * col_mean.iter().map(|b| (b - grand).powi(2)).sum::<f64>();
        let ss_int: f64 = cells
            .iter()
            .map(|&(i, j, v)| (v - row_mean[i] - col_mean[j] + grand).powi(2))
            .sum();
        (ss_rows, ss_cols, ss_int)
    } else {
        unbalanced(&cells, r, c, grand)?
    };

    let shares = (ss_total > 0.0).then(|| {
        let total = ss_rows + ss_cols + ss_interaction;
        [ss_rows / total, ss_cols / total, ss_interaction / total]
    });
    Ok(VarianceDecomposition {
        n_rows: r,
        n_cols: c,
        n_cells: cells.len(),
        balanced,
        ss_total,
        ss_rows,
        ss_cols,
        ss_interaction,
        shares,
    })
}

/// Fits v = a_i + b_j by alternating projections; the interaction is the
/// residual and the fitted sum of squares is split in proportion to the
/// spread of the row and column effects.
fn unbalanced(cells: &[(usize, usize, f64)], r: usize, c: usize, grand: f64) -> Result<(f64, f64, f64), StatsError> {
    let rows: Vec<usize> = cells.iter().map(|t| t.0).collect();
    let cols: Vec<usize> = cells.iter().map(|t| t.1).collect();
    let mut resid: Vec<f64> = cells.iter().map(|t| t.2).collect();
    let (_, effects) = alternating_demean(&mut resid, &[(&rows, r), (&cols, c)], DemeanOptions::default())?;
    let ss_int: f64 = resid.iter().map(|e| e * e).sum();
    let ss_model: f64 = cells.iter().zip(&resid).map(|(t, e)| (t.2 - e - grand).powi(2)).sum();
    let n = cells.len() as f64;
    let a_bar = rows.iter().map(|&i| effects[0][i]).sum::<f64>() / n;
    let b_bar = cols.iter().map(|&j| effects[1][j]).sum::<f64>() / n;
    let spread_a: f64 = rows.iter().map(|&i| (effects[0][i] - a_bar).powi(2)).sum();
    let spread_b: f64 = cols.iter().map(|&j| (effects[1][j] - b_bar).powi(2)).sum();
    let denom = spread_a + spread_b;
    if denom <= 0.0 {
        return Ok((0.0, 0.0, ss_int));
    }
    Ok((ss_model * spread_a / denom, ss_model * spread_b / denom, ss_int))
}
