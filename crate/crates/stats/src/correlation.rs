//! Pearson, Spearman and partial correlation, plus leave-one-out ranges.

use serde::{Deserialize, Serialize};

use crate::linalg::{design, ols};
use crate::series::{align, Series};
use crate::StatsError;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation of two equal-length slices.
pub fn pearson_slices(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(format!("{} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_slices(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    pearson_slices(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub n: usize,
}

pub fn pearson(x: &Series, y: &Series) -> Result<Correlation, StatsError> {
    let al = align(&[x, y]);
    Ok(Correlation { r: pearson_slices(&al.columns[0], &al.columns[1])?, n: al.keys.len() })
}

pub fn spearman(x: &Series, y: &Series) -> Result<Correlation, StatsError> {
    let al = align(&[x, y]);
    Ok(Correlation { r: spearman_slices(&al.columns[0], &al.columns[1])?, n: al.keys.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialCorrelation {
    pub r: f64,
    pub n: usize,
    /// The controls explain x or y completely; `r` is reported as 0.
    pub absorbed: bool,
}

/// Residual sums of squares below this fraction of the total are treated as
/// exact absorption by the controls.
const ABSORBED: f64 = 1e-18;

pub fn partial_correlation_slices(x: &[f64], y: &[f64], controls: &[&[f64]]) -> Result<PartialCorrelation, StatsError> {
    let n = x.len();
    let z = if controls.is_empty() { nalgebra::DMatrix::from_element(n, 1, 1.0) } else { design(controls, true)? };
    if z.nrows() != n || y.len() != n {
        return Err(StatsError::Length("x, y and controls differ in length".into()));
    }
    if n < z.ncols() + 2 {
        return Err(StatsError::TooFew { need: z.ncols() + 2, got: n });
    }
    let rx = ols(&z, x)?;
    let ry = ols(&z, y)?;
    let absorbed = |f: &crate::linalg::OlsFit| f.ssr <= ABSORBED * f.sst || f.sst == 0.0;
    if absorbed(&rx) || absorbed(&ry) {
        return Ok(PartialCorrelation { r: 0.0, n, absorbed: true });
    }
    Ok(PartialCorrelation { r: pearson_slices(&rx.residuals, &ry.residuals)?, n, absorbed: false })
}

pub fn partial_correlation(x: &Series, y: &Series, controls: &[&Series]) -> Result<PartialCorrelation, StatsError> {
    let mut all = vec![x, y];
    all.extend_from_slice(controls);
    let al = align(&all);
    let cs: Vec<&[f64]> = al.columns[2..].iter().map(Vec::as_slice).collect();
    partial_correlation_slices(&al.columns[0], &al.columns[1], &cs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub full: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation over the n deletions.
    pub sd: f64,
    /// Statistic with each key deleted.
    pub values: Vec<(String, f64)>,
}

pub fn leave_one_out(
    x: &Series,
    y: &Series,
    stat: impl Fn(&[f64], &[f64]) -> Result<f64, StatsError>,
) -> Result<LeaveOneOut, StatsError> {
    let al = align(&[x, y]);
    let n = al.keys.len();
    if n < 4 {
        return Err(StatsError::TooFew { need: 4, got: n });
    }
    let (xs, ys) = (&al.columns[0], &al.columns[1]);
    let full = stat(xs, ys)?;
    let mut values = Vec::with_capacity(n);
    for (i, key) in al.keys.iter().enumerate() {
        let xd: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let yd: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        values.push((key.clone(), stat(&xd, &yd)?));
    }
    let vs: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let m = mean(&vs);
    let sd = (vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(LeaveOneOut {
        full,
        min: vs.iter().copied().fold(f64::INFINITY, f64::min),
        max: vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sd,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_fixture() {
        let r = pearson_slices(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert!(matches!(pearson_slices(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::ZeroVariance("x"))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn exact_absorption() {
        let c = [1.0, 2.0, 4.0, 8.0, 3.0];
        let x = [0.3, -1.0, 2.0, 0.5, 0.1];
        let p = partial_correlation_slices(&x, &c, &[&c]).unwrap();
        assert!(p.absorbed);
        assert_eq!(p.r, 0.0);
    }
}
