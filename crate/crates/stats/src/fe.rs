//! Two-way fixed-effects regression with country-clustered standard errors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::ols;
use crate::StatsError;

/// Relative norm below which a demeaned regressor counts as absorbed.
const ABSORBED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemeanOptions {
    /// Stop when the largest group mean removed in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        DemeanOptions { tol: 1e-10, max_sweeps: 1000 }
    }
}

/// Dense group indices for string ids, ordered by id.
pub fn index_groups(ids: &[&str]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        let next = map.len();
        map.entry(id).or_insert(next);
    }
    let order: BTreeMap<usize, usize> =
        map.values().enumerate().map(|(sorted, &first_seen)| (first_seen, sorted)).collect();
    (ids.iter().map(|id| order[&map[id]]).collect(), map.len())
}

/// Removes group means for each grouping in turn until the removed means are
/// all below `tol`. Returns the number of sweeps and the accumulated effect
/// per group for each grouping.
pub fn alternating_demean(
    v: &mut [f64],
    groupings: &[(&[usize], usize)],
    opts: DemeanOptions,
) -> Result<(usize, Vec<Vec<f64>>), StatsError> {
    let mut effects: Vec<Vec<f64>> = groupings.iter().map(|(_, k)| vec![0.0; *k]).collect();
    for sweep in 1..=opts.max_sweeps {
        let mut largest: f64 = 0.0;
        for (g, (idx, k)) in groupings.iter().enumerate() {
            let mut sum = vec![0.0; *k];
            let mut count = vec![0usize; *k];
            for (val, &gi) in v.iter().zip(idx.iter()) {
                sum[gi] += val;
                count[gi] += 1;
            }
            let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
            for (val, &gi) in v.iter_mut().zip(idx.iter()) {
                *val -= means[gi];
            }
            for (e, m) in effects[g].iter_mut().zip(&means) {
                *e += m;
                largest = largest.max(m.abs());
            }
        }
        if largest < opts.tol {
            return Ok((sweep, effects));
        }
    }
    Err(StatsError::NonConvergent(opts.max_sweeps))
}

/// Connected components of the bipartite row-group / column-group graph.
pub fn connected_components(rows: &[usize], n_rows: usize, cols: &[usize], n_cols: usize) -> usize {
    let mut parent: Vec<usize> = (0..n_rows + n_cols).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (&r, &c) in rows.iter().zip(cols) {
        let (a, b) = (find(&mut parent, r), find(&mut parent, n_rows + c));
        if a != b {
            parent[a] = b;
        }
    }
    let used_rows: std::collections::BTreeSet<usize> = rows.iter().copied().collect();
    let used_cols: std::collections::BTreeSet<usize> = cols.iter().map(|c| n_rows + c).collect();
    let roots: std::collections::BTreeSet<usize> =
        used_rows.into_iter().chain(used_cols).map(|i| find(&mut parent, i)).collect();
    roots.len()
}

/// Cluster-robust covariance (B M B) scaled by G/(G−1)·(n−1)/(n−k).
pub fn cluster_robust_cov(
    x: &DMatrix<f64>,
    residuals: &[f64],
    clusters: &[usize],
    n_clusters: usize,
    k: usize,
) -> Result<DMatrix<f64>, StatsError> {
    let (n, p) = x.shape();
    if n_clusters < 2 {
        return Err(StatsError::SingleCluster(n_clusters));
    }
    if n <= k {
        return Err(StatsError::TooFew { need: k + 1, got: n });
    }
    let xtx = x.transpose() * x;
    let bread = xtx.try_inverse().ok_or(StatsError::RankDeficient { rank: 0, cols: p })?;
    let mut scores = vec![DVector::zeros(p); n_clusters];
    for i in 0..n {
        let row = x.row(i).transpose();
        scores[clusters[i]] += row * residuals[i];
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in &scores {
        meat += s * s.transpose();
    }
    let g = n_clusters as f64;
    let c = g / (g - 1.0) * (n as f64 - 1.0) / (n - k) as f64;
    Ok(&bread * meat * &bread * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeResult {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
    pub n_clusters: usize,
    pub n_row_groups: usize,
    pub n_col_groups: usize,
    pub components: usize,
    /// Parameters absorbed or estimated: p + rows + columns − components.
    pub k: usize,
    pub sweeps: usize,
    pub r2_within: f64,
}

/// y = x β + α_row + γ_col + ε, with standard errors clustered on `cluster`.
pub fn fe_regression(
    y: &[f64],
    x: &[&[f64]],
    row_fe: &[&str],
    col_fe: &[&str],
    cluster: &[&str],
    opts: DemeanOptions,
) -> Result<FeResult, StatsError> {
    let n = y.len();
    if x.iter().any(|c| c.len() != n) || row_fe.len() != n || col_fe.len() != n || cluster.len() != n {
        return Err(StatsError::Length("fixed-effects inputs differ in length".into()));
    }
    if x.is_empty() {
        return Err(StatsError::Param("at least one regressor is required".into()));
    }
    if y.iter().chain(x.iter().flat_map(|c| c.iter())).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("fixed-effects input".into()));
    }
    let (rows, n_rows) = index_groups(row_fe);
    let (cols, n_cols) = index_groups(col_fe);
    let (cl, n_cl) = index_groups(cluster);
    let groupings = [(rows.as_slice(), n_rows), (cols.as_slice(), n_cols)];

    let mut yt = y.to_vec();
    let (mut sweeps, _) = alternating_demean(&mut yt, &groupings, opts)?;
    let p = x.len();
    let mut xt = DMatrix::zeros(n, p);
    for (j, col) in x.iter().enumerate() {
        let mut c = col.to_vec();
        let (s, _) = alternating_demean(&mut c, &groupings, opts)?;
        sweeps = sweeps.max(s);
        // A regressor spanned by the fixed effects leaves only rounding noise.
        let before = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let after = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if after <= ABSORBED_TOL * before.max(f64::MIN_POSITIVE) {
            return Err(StatsError::RankDeficient { rank: j, cols: p });
        }
        xt.set_column(j, &DVector::from_vec(c));
    }

    let fit = ols(&xt, &yt)?;
    let components = connected_components(&rows, n_rows, &cols, n_cols);
    let k = p + n_rows + n_cols - components;
    let cov = cluster_robust_cov(&xt, &fit.residuals, &cl, n_cl, k)?;
    let tss: f64 = yt.iter().map(|v| v * v).sum();
    Ok(FeResult {
        se: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        beta: fit.coefficients,
        n,
        n_clusters: n_cl,
        n_row_groups: n_rows,
        n_col_groups: n_cols,
        components,
        k,
        sweeps,
        r2_within: if tss > 0.0 { 1.0 - fit.ssr / tss } else { 0.0 },
    })
}
