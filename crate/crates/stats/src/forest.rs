//! Regression forests grown on bootstrap samples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌈p/3⌉.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, mtry: None, min_leaf: 2, max_depth: None }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| p.div_ceil(3)).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize, cover: f64 },
    Leaf { value: f64, cover: f64 },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Arena-stored binary tree; node 0 is the root. Rows with x[feature] ≤
/// threshold go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Checks that children exist, sit after their parent, are each reached
    /// once, and that covers are positive.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree, StatsError> {
        if nodes.is_empty() {
            return Err(StatsError::Param("tree has no nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        seen[0] = true;
        for (i, node) in nodes.iter().enumerate() {
            if !(node.cover() > 0.0) {
                return Err(StatsError::Param(format!("node {i} has non-positive cover")));
            }
            if let Node::Split { left, right, threshold, .. } = node {
                if !threshold.is_finite() {
                    return Err(StatsError::NonFinite(format!("threshold of node {i}")));
                }
                for &c in [left, right] {
                    if c <= i || c >= nodes.len() || seen[c] {
                        return Err(StatsError::Param(format!("node {i} has invalid child {c}")));
                    }
                    seen[c] = true;
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(StatsError::Param(format!("node {i} is unreachable")));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub params: ForestParams,
    pub mtry: usize,
    pub seed: u64,
    /// The training outcome was constant; every tree is a single leaf.
    pub constant_y: bool,
}

impl Forest {
    pub fn from_trees(trees: Vec<Tree>, n_features: usize) -> Result<Forest, StatsError> {
        if trees.is_empty() {
            return Err(StatsError::Param("forest has no trees".into()));
        }
        for t in &trees {
            for n in t.nodes() {
                if let Node::Split { feature, .. } = n {
                    if *feature >= n_features {
                        return Err(StatsError::Dimension { expected: n_features, got: feature + 1 });
                    }
                }
            }
        }
        let params = ForestParams { n_trees: trees.len(), ..ForestParams::default() };
        Ok(Forest { trees, n_features, mtry: params.mtry_for(n_features), params, seed: 0, constant_y: false })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, StatsError> {
        if x.len() != self.n_features {
            return Err(StatsError::Dimension { expected: self.n_features, got: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, StatsError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Checks the feature matrix is rectangular and finite and returns p.
pub(crate) fn check_rows(x: &[Vec<f64>], n_y: usize) -> Result<usize, StatsError> {
    if x.len() != n_y {
        return Err(StatsError::Length(format!("{} rows, {} outcomes", x.len(), n_y)));
    }
    let p = x.first().map_or(0, Vec::len);
    if p == 0 {
        return Err(StatsError::Param("no features".into()));
    }
    for (i, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(StatsError::Dimension { expected: p, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(format!("row {i}")));
        }
    }
    Ok(p)
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> Result<Forest, StatsError> {
    let p = check_rows(x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("outcome".into()));
    }
    if params.min_leaf == 0 || params.n_trees == 0 {
        return Err(StatsError::Param("min_leaf and n_trees must be positive".into()));
    }
    let n = y.len();
    if n < 2 * params.min_leaf {
        return Err(StatsError::TooFew { need: 2 * params.min_leaf, got: n });
    }
    let mtry = params.mtry_for(p);
    let constant_y = y.iter().all(|v| *v == y[0]);
    let trees: Vec<Tree> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut b = Builder { x, y, p, mtry, params, rng, nodes: Vec::new() };
            b.grow(sample, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { trees, n_features: p, params, mtry, seed, constant_y })
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    p: usize,
    mtry: usize,
    params: ForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let cover = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / cover;
        self.nodes.push(Node::Leaf { value: mean, cover });
        let first = self.y[idx[0]];
        if idx.len() < 2 * self.params.min_leaf
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || idx.iter().all(|&i| self.y[i] == first)
        {
            return id;
        }
        let Some(choice) = self.best_split(&idx) else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][choice.feature] <= choice.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature: choice.feature, threshold: choice.threshold, left, right, cover };
        id
    }

    /// Tries features in a random order; the first `mtry` are always
    /// evaluated and the search continues past them only while no valid
    /// split has been found.
    fn best_split(&mut self, idx: &[usize]) -> Option<SplitChoice> {
        let mut order: Vec<usize> = (0..self.p).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<SplitChoice> = None;
        for (k, &f) in order.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_on_feature(idx, f) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_on_feature(&self, idx: &[usize], f: usize) -> Option<SplitChoice> {
        let mut pts: Vec<(f64, f64)> = idx.iter().map(|&i| (self.x[i][f], self.y[i])).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pts.len();
        let total: f64 = pts.iter().map(|p| p.1).sum();
        let base = total * total / n as f64;
        let min_leaf = self.params.min_leaf;
        let mut left_sum = 0.0;
        let mut best: Option<SplitChoice> = None;
        for k in 1..n {
            left_sum += pts[k - 1].1;
            if k < min_leaf || n - k < min_leaf || pts[k - 1].0 == pts[k].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                let (lo, hi) = (pts[k - 1].0, pts[k].0);
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(SplitChoice { feature: f, threshold, gain });
            }
        }
        best
    }
}
