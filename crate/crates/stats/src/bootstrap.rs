//! Seeded unit-level bootstrap with percentile intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::StatsError;

/// Generator for one replicate: the stream id is the replicate index, so a
/// replicate's draws depend only on (seed, replicate).
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Unit indices drawn with replacement for one replicate.
pub fn resample_indices(seed: u64, replicate: u64, n: usize) -> Vec<usize> {
    let mut rng = replicate_rng(seed, replicate);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Type-7 quantile of sorted data (linear interpolation between order
/// statistics).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Replicates with a finite value, per point.
    pub valid: Vec<usize>,
}

/// Percentile band for a vector-valued statistic of resampled units.
///
/// `stat` receives the drawn unit indices and returns one value per grid
/// point; non-finite values are skipped at that point.
pub fn bootstrap_band<F>(n_units: usize, resamples: usize, level: f64, seed: u64, stat: F) -> Result<Band, StatsError>
where
    F: Fn(&[usize]) -> Vec<f64> + Sync,
{
    if resamples < 2 {
        return Err(StatsError::Param(format!("resamples must be at least 2, got {resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Param(format!("level {level} not in (0, 1)")));
    }
    if n_units == 0 {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let reps: Vec<Vec<f64>> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| stat(&resample_indices(seed, r, n_units)))
        .collect();
    let points = reps.first().map_or(0, Vec::len);
    if reps.iter().any(|r| r.len() != points) {
        return Err(StatsError::Length("statistic length varies across replicates".into()));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(points);
    let mut upper = Vec::with_capacity(points);
    let mut valid = Vec::with_capacity(points);
    for j in 0..points {
        let mut col: Vec<f64> = reps.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, alpha).unwrap_or(f64::NAN));
        upper.push(quantile_sorted(&col, 1.0 - alpha).unwrap_or(f64::NAN));
        valid.push(col.len());
    }
    Ok(Band { level, resamples, seed, lower, upper, valid })
}
