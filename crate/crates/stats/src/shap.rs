//! Path-dependent TreeSHAP and permutation importance.
//!
//! Attributions are exact Shapley values of the game whose value for a
//! feature subset S is the tree's expected output when features in S follow
//! x and all other splits are averaged by training cover.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forest::{check_rows, fit_forest, Forest, ForestParams, Node, Tree};
use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub values: Vec<f64>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem { feature, zero, one, weight: if l == 0 { 1.0 } else { 0.0 } });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lf;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * lf / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / lf;
        } else {
            path[j].weight = path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let lf = (l + 1) as f64;
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = next * lf / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64 / lf;
        } else {
            total += path[j].weight / zero * lf / (l - j) as f64;
        }
    }
    total
}

fn recurse(tree: &Tree, x: &[f64], phi: &mut [f64], node: usize, mut path: Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    extend(&mut path, zero, one, feature);
    match &tree.nodes()[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                if let Some(f) = el.feature {
                    phi[f] += w * (el.one - el.zero) * value;
                }
            }
        }
        Node::Split { feature: f, threshold, left, right, cover } => {
            let (hot, cold) = if x[*f] <= *threshold { (*left, *right) } else { (*right, *left) };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(*f)) {
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            let nodes = tree.nodes();
            recurse(tree, x, phi, hot, path.clone(), iz * nodes[hot].cover() / cover, io, Some(*f));
            recurse(tree, x, phi, cold, path, iz * nodes[cold].cover() / cover, 0.0, Some(*f));
        }
    }
}

/// Cover-weighted mean of the leaf values.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        match &t.nodes()[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split { left, right, cover, .. } => {
                let n = t.nodes();
                (n[*left].cover() * go(t, *left) + n[*right].cover() * go(t, *right)) / cover
            }
        }
    }
    go(tree, 0)
}

pub fn tree_shap_single(tree: &Tree, x: &[f64], n_features: usize) -> Attribution {
    let mut phi = vec![0.0; n_features];
    recurse(tree, x, &mut phi, 0, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, None);
    Attribution { base_value: expected_value(tree), values: phi }
}

/// Attribution for the forest's mean prediction.
pub fn tree_shap(forest: &Forest, x: &[f64]) -> Result<Attribution, StatsError> {
    if x.len() != forest.n_features {
        return Err(StatsError::Dimension { expected: forest.n_features, got: x.len() });
    }
    let p = forest.n_features;
    let mut base = 0.0;
    let mut values = vec![0.0; p];
    for t in &forest.trees {
        let a = tree_shap_single(t, x, p);
        base += a.base_value;
        for (v, a) in values.iter_mut().zip(&a.values) {
            *v += a;
        }
    }
    let k = forest.trees.len() as f64;
    Ok(Attribution { base_value: base / k, values: values.into_iter().map(|v| v / k).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRanking {
    /// Mean |SHAP| × 100 per feature, in input order.
    pub values: Vec<f64>,
    /// Feature indices by descending value; ties keep input order.
    pub order: Vec<usize>,
    pub seeds: Vec<u64>,
    pub params: ForestParams,
}

/// Mean absolute attribution over rows and forests fitted with each seed.
pub fn mean_abs_shap(x: &[Vec<f64>], y: &[f64], params: ForestParams, seeds: &[u64]) -> Result<ShapRanking, StatsError> {
    if seeds.is_empty() {
        return Err(StatsError::Param("at least one seed is required".into()));
    }
    let p = check_rows(x, y.len())?;
    let mut totals = vec![0.0; p];
    for &seed in seeds {
        let forest = fit_forest(x, y, params, seed)?;
        let per_row: Vec<Attribution> = x.par_iter().map(|r| tree_shap(&forest, r)).collect::<Result<_, _>>()?;
        let mut sums = vec![0.0; p];
        for a in &per_row {
            for (s, v) in sums.iter_mut().zip(&a.values) {
                *s += v.abs();
            }
        }
        for (t, s) in totals.iter_mut().zip(&sums) {
            *t += s / x.len() as f64;
        }
    }
    let values: Vec<f64> = totals.iter().map(|t| 100.0 * t / seeds.len() as f64).collect();
    Ok(ShapRanking { order: descending(&values), values, seeds: seeds.to_vec(), params })
}

pub(crate) fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn mse(forest: &Forest, x: &[Vec<f64>], y: &[f64]) -> Result<f64, StatsError> {
    let pred = forest.predict_rows(x)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub baseline_mse: f64,
    /// Mean increase in squared error per feature.
    pub importance: Vec<f64>,
    pub order: Vec<usize>,
    pub seed: u64,
    pub repeats: usize,
}

/// Each (feature, repeat) permutation draws from its own stream so results
/// do not depend on evaluation order.
pub fn permutation_importance(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[f64],
    seed: u64,
    repeats: usize,
) -> Result<PermutationImportance, StatsError> {
    let p = check_rows(x, y.len())?;
    if p != forest.n_features {
        return Err(StatsError::Dimension { expected: forest.n_features, got: p });
    }
    if repeats == 0 || y.is_empty() {
        return Err(StatsError::Param("repeats and rows must be positive".into()));
    }
    let baseline = mse(forest, x, y)?;
    let importance: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|f| {
            let mut total = 0.0;
            for r in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((f as u64) << 32) | r as u64);
                let mut col: Vec<f64> = x.iter().map(|row| row[f]).collect();
                col.shuffle(&mut rng);
                let permuted: Vec<Vec<f64>> = x
                    .iter()
                    .zip(&col)
                    .map(|(row, v)| {
                        let mut row = row.clone();
                        row[f] = *v;
                        row
                    })
                    .collect();
                total += mse(forest, &permuted, y)? - baseline;
            }
            Ok(total / repeats as f64)
        })
        .collect::<Result<_, StatsError>>()?;
    Ok(PermutationImportance { baseline_mse: baseline, order: descending(&importance), importance, seed, repeats })
}
