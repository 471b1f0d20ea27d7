//! Statistics commands over a column-named CSV table.

use anyhow::{anyhow, bail, Result};
use atlas_stats::ale::ale_1d;
use atlas_stats::bootstrap::bootstrap_band;
use atlas_stats::correlation::{leave_one_out, partial_correlation_slices, pearson_slices, spearman_slices};
use atlas_stats::dominance::shapley_r2;
use atlas_stats::fe::{fe_regression, DemeanOptions};
use atlas_stats::loess::loess;
use atlas_stats::vardecomp::variance_decomposition;
use atlas_stats::{fit_forest, mean_abs_shap, permutation_importance, Series};
use serde_json::json;

use crate::config::StatsConfig;
use crate::output::{num, Outputs};
use crate::table::{pivot, DataTable};

/// Column roles shared by the stats commands.
#[derive(Debug, Clone, Default)]
pub struct Columns {
    pub id: Option<String>,
    pub x: Vec<String>,
    pub y: Option<String>,
    pub controls: Vec<String>,
    pub row: Option<String>,
    pub col: Option<String>,
    pub cluster: Option<String>,
    pub feature: Option<String>,
}

fn need<'a>(v: &'a Option<String>, flag: &str) -> Result<&'a str> {
    v.as_deref().ok_or_else(|| anyhow!("--{flag} is required"))
}

fn one_x(c: &Columns) -> Result<&str> {
    match c.x.as_slice() {
        [x] => Ok(x),
        [] => bail!("--x is required"),
        _ => bail!("exactly one --x column is expected"),
    }
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

pub fn corr(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns) -> Result<serde_json::Value> {
    let (x, y) = (one_x(c)?, need(&c.y, "y")?);
    let mut cols = vec![x, y];
    cols.extend(refs(&c.controls));
    let sel = table.select(c.id.as_deref(), &cols, &[])?;
    let (xs, ys) = (&sel.values[0], &sel.values[1]);
    let series = |v: &Vec<f64>| Series::new(sel.ids.iter().cloned().zip(v.iter().copied()));
    let (sx, sy) = (series(xs)?, series(ys)?);
    let loo = |stat: fn(&[f64], &[f64]) -> Result<f64, atlas_stats::StatsError>| match leave_one_out(&sx, &sy, stat) {
        Ok(l) => json!(l),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let partial = if c.controls.is_empty() {
        serde_json::Value::Null
    } else {
        let ctrl: Vec<&[f64]> = sel.values[2..].iter().map(Vec::as_slice).collect();
        json!(partial_correlation_slices(xs, ys, &ctrl)?)
    };
    let result = json!({
        "x": x,
        "y": y,
        "controls": c.controls,
        "n": sel.ids.len(),
        "dropped": sel.dropped,
        "pearson": pearson_slices(xs, ys)?,
        "spearman": spearman_slices(xs, ys)?,
        "partial": partial,
        "leave_one_out_pearson": loo(pearson_slices),
        "leave_one_out_spearman": loo(spearman_slices),
    });
    out.json(&format!("{name}.json"), &result)?;
    Ok(result)
}

fn even_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || lo == hi {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

pub fn loess_band(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns, cfg: &StatsConfig, seed: u64) -> Result<()> {
    let (x, y) = (one_x(c)?, need(&c.y, "y")?);
    let sel = table.select(c.id.as_deref(), &[x, y], &[])?;
    let (xs, ys) = (&sel.values[0], &sel.values[1]);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        bail!("no complete rows for {x} and {y}");
    }
    let grid = even_grid(lo, hi, cfg.grid_points);
    let fit = loess(xs, ys, &grid, cfg.span)?;
    let band = bootstrap_band(xs.len(), cfg.resamples, cfg.level, seed, |idx| {
        let bx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        loess(&bx, &by, &grid, cfg.span).map(|f| f.fitted).unwrap_or_else(|_| vec![f64::NAN; grid.len()])
    })?;
    let rows = (0..grid.len()).map(|i| {
        vec![
            num(grid[i]),
            num(fit.fitted[i]),
            num(band.lower[i]),
            num(band.upper[i]),
            band.valid[i].to_string(),
            fit.degenerate[i].to_string(),
        ]
    });
    out.csv(&format!("{name}.csv"), &["x", "fitted", "lower", "upper", "valid_resamples", "degenerate"], rows)?;
    Ok(())
}

pub fn vardecomp(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns) -> Result<()> {
    let (row, col, value) = (need(&c.row, "row")?, need(&c.col, "col")?, need(&c.y, "y")?);
    let sel = table.select(None, &[value], &[row, col])?;
    let cells = (0..sel.ids.len()).map(|i| (sel.labels[0][i].clone(), sel.labels[1][i].clone(), sel.values[0][i]));
    let (rows, cols, matrix) = pivot(cells)?;
    let d = variance_decomposition(&matrix)?;
    out.json(&format!("{name}.json"), &json!({ "row": row, "col": col, "value": value, "rows": rows, "cols": cols, "decomposition": d }))?;
    Ok(())
}

pub fn fe(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns) -> Result<()> {
    let y = need(&c.y, "y")?;
    if c.x.is_empty() {
        bail!("--x is required");
    }
    let (row, col) = (need(&c.row, "row")?, need(&c.col, "col")?);
    let cluster = c.cluster.as_deref().unwrap_or(row);
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for x in &c.x {
        let sel = table.select(None, &[y, x.as_str()], &[row, col, cluster])?;
        let labels: Vec<Vec<&str>> = sel.labels.iter().map(|l| refs(l)).collect();
        let r = fe_regression(&sel.values[0], &[&sel.values[1]], &labels[0], &labels[1], &labels[2], DemeanOptions::default())?;
        rows.push(vec![
            x.clone(),
            num(r.beta[0]),
            num(r.se[0]),
            r.n.to_string(),
            r.n_clusters.to_string(),
            r.k.to_string(),
            num(r.r2_within),
        ]);
        results.push(json!({ "x": x, "fit": r }));
    }
    out.csv(&format!("{name}.csv"), &["x", "beta", "se", "n", "n_clusters", "k", "r2_within"], rows)?;
    out.json(&format!("{name}.json"), &json!({ "y": y, "row_fe": row, "col_fe": col, "cluster": cluster, "regressions": results }))?;
    Ok(())
}

/// Rows of the feature columns plus the outcome, complete cases only.
fn design(table: &DataTable, c: &Columns) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize)> {
    let y = need(&c.y, "y")?;
    if c.x.is_empty() {
        bail!("--x is required");
    }
    let mut cols = refs(&c.x);
    cols.push(y);
    let sel = table.select(c.id.as_deref(), &cols, &[])?;
    let p = c.x.len();
    let x = sel.rows().into_iter().map(|mut r| { r.truncate(p); r }).collect();
    Ok((x, sel.values[p].clone(), sel.dropped))
}

fn ranks(order: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; order.len()];
    for (r, &f) in order.iter().enumerate() {
        rank[f] = r + 1;
    }
    rank
}

pub fn forest(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns, cfg: &StatsConfig, seed: u64) -> Result<()> {
    let (x, y, dropped) = design(table, c)?;
    let f = fit_forest(&x, &y, cfg.forest, seed)?;
    let imp = permutation_importance(&f, &x, &y, seed, cfg.importance_repeats)?;
    let rank = ranks(&imp.order);
    out.csv(
        &format!("{name}_importance.csv"),
        &["feature", "importance", "rank"],
        c.x.iter().enumerate().map(|(i, n)| vec![n.clone(), num(imp.importance[i]), rank[i].to_string()]),
    )?;
    out.json(
        &format!("{name}.json"),
        &json!({
            "features": c.x,
            "n": y.len(),
            "dropped": dropped,
            "n_trees": f.trees.len(),
            "mtry": f.mtry,
            "params": f.params,
            "importance": imp,
            "evaluated_on": "training",
        }),
    )?;
    Ok(())
}

pub fn shap(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns, cfg: &StatsConfig) -> Result<()> {
    let (x, y, _) = design(table, c)?;
    let s = mean_abs_shap(&x, &y, cfg.forest, &cfg.shap_seeds)?;
    let rank = ranks(&s.order);
    out.csv(
        &format!("{name}.csv"),
        &["feature", "mean_abs_shap_x100", "rank"],
        c.x.iter().enumerate().map(|(i, n)| vec![n.clone(), num(s.values[i]), rank[i].to_string()]),
    )?;
    Ok(())
}

pub fn ale(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns, cfg: &StatsConfig, seed: u64) -> Result<()> {
    let (x, y, _) = design(table, c)?;
    let features: Vec<usize> = match &c.feature {
        Some(f) => vec![c.x.iter().position(|n| n == f).ok_or_else(|| anyhow!("--feature {f} is not one of the --x columns"))?],
        None => (0..c.x.len()).collect(),
    };
    let f = fit_forest(&x, &y, cfg.forest, seed)?;
    let model = |r: &[f64]| f.predict(r).unwrap_or(f64::NAN);
    let mut rows = Vec::new();
    for j in features {
        let curve = ale_1d(model, &x, j, cfg.bins)?;
        for (k, (z, v)) in curve.grid.iter().zip(&curve.values).enumerate() {
            let count = if k == 0 { String::new() } else { curve.counts[k - 1].to_string() };
            rows.push(vec![c.x[j].clone(), k.to_string(), num(*z), num(*v), count, curve.direction.to_string(), curve.merged.to_string()]);
        }
    }
    out.csv(&format!("{name}.csv"), &["feature", "edge", "x", "ale", "bin_count", "direction", "merged"], rows)?;
    Ok(())
}

pub fn dominance(out: &mut Outputs, name: &str, table: &DataTable, c: &Columns) -> Result<()> {
    let (x, y, _) = design(table, c)?;
    let cols: Vec<Vec<f64>> = (0..c.x.len()).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let d = shapley_r2(&col_refs, &y)?;
    let mut rows: Vec<Vec<String>> = c
        .x
        .iter()
        .zip(&d.contributions)
        .map(|(n, v)| {
            let share = if d.full_r2 > 0.0 { num(v / d.full_r2) } else { String::new() };
            vec![n.clone(), num(*v), share]
        })
        .collect();
    rows.push(vec!["full_r2".into(), num(d.full_r2), String::new()]);
    out.csv(&format!("{name}.csv"), &["feature", "r2_contribution", "share_of_r2"], rows)?;
    Ok(())
}
