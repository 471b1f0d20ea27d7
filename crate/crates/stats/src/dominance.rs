//! Dominance analysis: Shapley decomposition of a linear model's R².

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{design, ols_dropping};
use crate::StatsError;

pub const MAX_PREDICTORS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub contributions: Vec<f64>,
    pub full_r2: f64,
    pub n: usize,
    /// Subsets where dependent columns were dropped before fitting.
    pub rank_deficient_subsets: usize,
}

/// R² of y on an intercept plus the columns in `mask`.
fn subset_r2(columns: &[&[f64]], y: &[f64], mask: u32) -> Result<(f64, bool), StatsError> {
    if mask == 0 {
        return Ok((0.0, false));
    }
    let cols: Vec<&[f64]> = columns.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, c)| *c).collect();
    let x = design(&cols, true)?;
    let (fit, kept) = ols_dropping(&x, y)?;
    Ok((fit.r2, kept.len() < x.ncols()))
}

/// Each predictor's R² increment averaged over all orderings, computed from
/// the 2^p subset fits with weights |S|!(p−|S|−1)!/p!.
pub fn shapley_r2(columns: &[&[f64]], y: &[f64]) -> Result<Dominance, StatsError> {
    let p = columns.len();
    if p == 0 {
        return Err(StatsError::Param("no predictors".into()));
    }
    if p > MAX_PREDICTORS {
        return Err(StatsError::Param(format!("{p} predictors exceeds the exact limit of {MAX_PREDICTORS}")));
    }
    let n = y.len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(StatsError::Length("predictors and outcome differ in length".into()));
    }
    if n < p + 2 {
        return Err(StatsError::TooFew { need: p + 2, got: n });
    }
    let fits: Vec<(f64, bool)> = (0..1u32 << p)
        .into_par_iter()
        .map(|mask| subset_r2(columns, y, mask))
        .collect::<Result<_, _>>()?;
    // weight[s] = s!(p−s−1)!/p!, built as a product to stay finite for p ≤ 20
    let weight: Vec<f64> = (0..p)
        .map(|s| {
            let mut w = 1.0 / p as f64;
            for k in 1..=s {
                w *= k as f64 / (p - k) as f64;
            }
            w
        })
        .collect();
    let mut contributions = vec![0.0; p];
    for (i, c) in contributions.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..1u32 << p {
            if mask & bit == 0 {
                *c += weight[mask.count_ones() as usize] * (fits[(mask | bit) as usize].0 - fits[mask as usize].0);
            }
        }
    }
    Ok(Dominance {
        contributions,
        full_r2: fits[(1usize << p) - 1].0,
        n,
        rank_deficient_subsets: fits.iter().filter(|f| f.1).count(),
    })
}
