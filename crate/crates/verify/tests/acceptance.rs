//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Each criterion has a synthetic check that always runs. When
//! `ATLAS_REPLICATION_DIR` points at a directory holding the released
//! replication files, the published values are checked as well; see the
//! README for the expected file names.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use atlas_core::aggregate::{polarisation, summarize_all, CountrySummary};
use atlas_core::ingest::{load_country_registry, load_labels, open};
use atlas_core::linkage::{load_texts, prune_edges, Candidate};
use atlas_core::provider::{vote_digest, ReplayStore, ReplayVoter};
use atlas_core::schema::validate_record;
use atlas_core::validate::{agreement_suite, distribution_check, paraphrase_stability};
use atlas_core::{AiFunction, Channel, ExposedMargin, IncomeGroup, LabelDataset};
use atlas_stats::correlation::{leave_one_out, partial_correlation_slices, pearson_slices};
use atlas_stats::dominance::shapley_r2;
use atlas_stats::fe::{fe_regression, DemeanOptions};
use atlas_stats::shap::tree_shap;
use atlas_stats::vardecomp::variance_decomposition;
use atlas_stats::{fit_forest, Forest, ForestParams, Node, Series, Tree};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn replication(file: &str) -> Option<PathBuf> {
    let dir = std::env::var_os("ATLAS_REPLICATION_DIR")?;
    let p = Path::new(&dir).join(file);
    p.exists().then_some(p)
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// Synthetic labels
// ---------------------------------------------------------------------------

const MARGINS: [&str; 4] = ["substitute", "augment", "both", "unclear"];

fn raw_record(rng: &mut ChaCha8Rng, country: &str, task: &str) -> Map<String, Value> {
    let level: u8 = rng.gen_range(0..=3);
    let margin = MARGINS[rng.gen_range(0..4)];
    let sub = matches!(margin, "substitute" | "both") || rng.gen_bool(0.3);
    let aug = matches!(margin, "augment" | "both") || rng.gen_bool(0.3);
    let ai = rng.gen_bool(0.4);
    let function = if ai && rng.gen_bool(0.8) { AiFunction::ACTIVE[rng.gen_range(0..4)].as_str() } else { "none" };
    let v = json!({
        "task_id": task,
        "country": country,
        "exposure_level": level,
        "dominant_channel": Channel::ALL[rng.gen_range(0..Channel::ALL.len())].as_str(),
        "substitution_path": sub,
        "augmentation_path": aug,
        "margin": margin,
        "ai_materiality": ai,
        "dominant_ai_function": function,
        "short_rationale": format!("Task {task} in {country}."),
        "substitution_summary": "s",
        "augmentation_summary": "a",
    });
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn random_raw(rng: &mut ChaCha8Rng, countries: &[&str], tasks: usize) -> Vec<Map<String, Value>> {
    let mut out = Vec::new();
    for c in countries {
        for t in 0..tasks {
            out.push(raw_record(rng, c, &format!("T{t:04}")));
        }
    }
    out
}

fn dataset_of(raw: &[Map<String, Value>]) -> LabelDataset {
    LabelDataset::from_unique(raw.iter().map(|r| validate_record(r).expect("generator emits valid rows").record))
}

fn random_dataset(seed: u64) -> LabelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_countries = rng.gen_range(1..=6);
    let pool = ["AAA", "BBB", "CCC", "DDD", "EEE", "FFF"];
    let tasks = rng.gen_range(5..60);
    dataset_of(&random_raw(&mut rng, &pool[..n_countries], tasks))
}

fn level_of(r: &Map<String, Value>) -> u64 {
    r["exposure_level"].as_u64().unwrap()
}

// ---------------------------------------------------------------------------
// 1. Distribution diagnostics
// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let countries = ["AAA", "BBB", "CCC", "DDD", "EEE", "FFF", "GGG", "HHH", "III", "JJJ"];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let raw = random_raw(&mut rng, &countries, 100);
        ensure!(raw.len() == 1000, "fixture has {} rows", raw.len());
        let path = dir.path().join(format!("fixture_{seed}.jsonl"));
        let body: String = raw.iter().map(|r| format!("{}\n", Value::Object(r.clone()))).collect();
        std::fs::write(&path, body).map_err(|e| e.to_string())?;
        let (ds, report) = load_labels(&path, None).map_err(|e| e.to_string())?;
        ensure!(report.rows_accepted == 1000, "seed {seed}: {} accepted", report.rows_accepted);
        let table = &distribution_check(&ds, None)[0];

        let mut expect: BTreeMap<(&str, String), u64> = BTreeMap::new();
        for r in &raw {
            let level = level_of(r);
            let margin = if level < 2 { "unclear".to_string() } else { r["margin"].as_str().unwrap().to_string() };
            *expect.entry(("exposure", level.to_string())).or_default() += 1;
            *expect.entry(("channel", r["dominant_channel"].as_str().unwrap().to_string())).or_default() += 1;
            *expect.entry(("margin", margin)).or_default() += 1;
            *expect.entry(("ai_material", r["ai_materiality"].as_bool().unwrap().to_string())).or_default() += 1;
        }
        let fields = [("exposure", &table.exposure), ("channel", &table.channel), ("margin", &table.margin), ("ai_material", &table.ai_material)];
        for (name, shares) in fields {
            for (k, share) in shares {
                let count = expect.get(&(name, k.clone())).copied().unwrap_or(0);
                ensure!(*share == count as f64 / 1000.0, "seed {seed}: {name}={k} share {share} vs count {count}");
            }
            let total: u64 = expect.iter().filter(|((f, _), _)| *f == name).map(|(_, c)| c).sum();
            ensure!(total == 1000, "seed {seed}: {name} oracle counted {total}");
        }
    }
    let mut detail = "5 x 1,000-record fixtures match brute-force counts exactly".to_string();

    if let Some(path) = replication("labels.jsonl") {
        let started = Instant::now();
        let (ds, _) = load_labels(&path, None).map_err(|e| e.to_string())?;
        let t = &distribution_check(&ds, None)[0];
        let pp = |v: f64| v * 100.0;
        for (level, paper) in [("0", 33.8), ("1", 24.8), ("2", 34.1), ("3", 7.3)] {
            let got = pp(t.exposure[level]);
            ensure!(within(got, paper, 0.1), "replication level {level}: {got:.3}% vs {paper}%");
        }
        let exposed = pp(t.exposure["2"] + t.exposure["3"]);
        ensure!(within(exposed, 41.4, 0.1), "replication exposed share {exposed:.3}% vs 41.4%");
        let unclear = pp(t.margin["unclear"]);
        ensure!(within(unclear, 58.4, 0.1), "replication margin unclear {unclear:.3}% vs 58.4%");
        detail += &format!("; replication shares within 0.1 pp ({} records, {:.1?})", ds.len(), started.elapsed());
    } else {
        detail += "; replication labels not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 2. Denominator identities
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_general = 0.0f64;
    let mut broken = Vec::new();
    let mut checked = 0;
    for seed in 0..50u64 {
        let ds = random_dataset(200 + seed);
        for s in summarize_all(&ds) {
            let Some(w) = s.margin_shares_within else { continue };
            checked += 1;
            let classified = s.n_margin_classified() as f64 / s.n_tasks as f64;
            for m in ExposedMargin::ALL3 {
                let all = s.margin_shares_all.get(m);
                let err = (all - s.exposed_share * w.get(m)).abs();
                worst = worst.max(err);
                worst_general = worst_general.max((all - classified * w.get(m)).abs());
                if err > 1e-9 && broken.last() != Some(&(seed, s.iso3.clone())) {
                    broken.push((seed, s.iso3.clone()));
                }
            }
        }
    }
    ensure!(
        broken.is_empty(),
        "margin_shares_all = exposed_share x within fails for {} of {checked} countries (max error {worst:.3e}); \
         exposed records with an unclear margin stay in exposed_share but leave the within shares; \
         with the classified-exposed share in place of exposed_share the identity holds to {worst_general:.1e}",
        broken.len()
    );
    let mut detail = format!("{checked} countries over 50 fixtures, max error {worst:.1e}");
    if let Some(path) = replication("labels.jsonl") {
        let (ds, _) = load_labels(&path, None).map_err(|e| e.to_string())?;
        let by: BTreeMap<String, CountrySummary> = summarize_all(&ds).into_iter().map(|s| (s.iso3.clone(), s)).collect();
        for (iso, paper) in [("SSD", 3.3), ("CHN", 61.6)] {
            let got = by.get(iso).map(|s| s.exposed_share * 100.0).ok_or(format!("{iso} missing"))?;
            ensure!(within(got, paper, 0.05), "replication {iso} exposed {got:.3}% vs {paper}%");
        }
        detail += "; replication SSD/CHN within 0.05 pp";
    } else {
        detail += "; replication labels not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 3. Polarisation identity
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut datasets: Vec<LabelDataset> = (0..50u64).map(|s| random_dataset(300 + s)).collect();
    datasets.push(load_labels(&fixtures().join("labels.jsonl"), None).map_err(|e| e.to_string())?.0);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for ds in &datasets {
        for s in summarize_all(ds) {
            let Some(w) = s.margin_shares_within else { continue };
            let p = polarisation(&s).map_err(|e| e.to_string())?;
            let err = (p.p + w.both - 1.0).abs();
            worst = worst.max(err);
            ensure!(err <= 1e-12, "{}: P + both - 1 = {err:e}", s.iso3);
            checked += 1;
        }
    }
    let mut detail = format!("{checked} countries, max |P + both - 1| = {worst:.1e}");
    if let (Some(labels), Some(reg)) = (replication("labels.jsonl"), replication("registry.csv")) {
        let (ds, _) = load_labels(&labels, None).map_err(|e| e.to_string())?;
        let registry = load_country_registry(open(&reg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut groups: BTreeMap<IncomeGroup, Vec<f64>> = BTreeMap::new();
        for s in summarize_all(&ds) {
            if let (Some(ctx), Ok(p)) = (registry.get(&s.iso3), polarisation(&s)) {
                groups.entry(ctx.income_group).or_default().push(p.p);
            }
        }
        for (g, paper) in [(IncomeGroup::Low, 0.50), (IncomeGroup::LowerMiddle, 0.43)] {
            let v = groups.get(&g).ok_or(format!("no {g} countries"))?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            ensure!(within(mean, paper, 0.02), "replication {g} mean P {mean:.3} vs {paper}");
        }
        detail += "; replication low/lower-middle P within 0.02";
    } else {
        detail += "; replication labels not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 4. Agreement
// ---------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    for seed in 0..20u64 {
        let ds = random_dataset(400 + seed);
        let r = agreement_suite(&ds, &ds).map_err(|e| e.to_string())?;
        ensure!(r.exact_level == 1.0 && r.within_one_level == 1.0 && r.binary_exposed == 1.0, "seed {seed}: {r:?}");
        ensure!(r.per_field.values().all(|v| *v == 1.0), "seed {seed}: per-field {:?}", r.per_field);
        let off_diagonal: u64 = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| r.confusion[i][j]).sum();
        ensure!(off_diagonal == 0, "seed {seed}: off-diagonal confusion mass {off_diagonal}");
    }
    let mut detail = "agreement(a, a) = 1 on every metric for 20 datasets".to_string();
    if let (Some(a), Some(b)) = (replication("crossmodel_a.jsonl"), replication("crossmodel_b.jsonl")) {
        let (da, _) = load_labels(&a, None).map_err(|e| e.to_string())?;
        let (db, _) = load_labels(&b, None).map_err(|e| e.to_string())?;
        let r = agreement_suite(&da, &db).map_err(|e| e.to_string())?;
        for (name, got, paper) in [("within-one", r.within_one_level, 95.0), ("binary", r.binary_exposed, 75.1), ("exact", r.exact_level, 48.1)] {
            ensure!(within(got * 100.0, paper, 0.2), "replication {name} {:.2}% vs {paper}%", got * 100.0);
        }
        detail += "; replication cross-model agreement within 0.2 pp";
    } else {
        detail += "; replication cross-model runs not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 5. Paraphrase stability
// ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    for seed in 0..10u64 {
        let ds = random_dataset(500 + seed);
        let variants = vec![ds.clone(), ds.clone(), ds.clone()];
        let r = paraphrase_stability(&ds, &variants).map_err(|e| e.to_string())?;
        ensure!(r.joint_within_one == 1.0, "seed {seed}: joint share {}", r.joint_within_one);
    }
    let mut detail = "joint within-one share = 1 for identical variants (10 datasets)".to_string();
    let files = ["paraphrase_original.jsonl", "paraphrase_1.jsonl", "paraphrase_2.jsonl", "paraphrase_3.jsonl"];
    if let Some(paths) = files.iter().map(|f| replication(f)).collect::<Option<Vec<_>>>() {
        let sets = paths
            .iter()
            .map(|p| load_labels(p, None).map(|(d, _)| d).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let r = paraphrase_stability(&sets[0], &sets[1..]).map_err(|e| e.to_string())?;
        ensure!(within(r.joint_within_one * 100.0, 99.8, 0.2), "replication joint {:.2}%", r.joint_within_one * 100.0);
        for (v, paper) in r.per_variant.iter().zip([88.7, 87.0, 84.3]) {
            ensure!(within(v.binary_exposed * 100.0, paper, 0.3), "replication binary {:.2}% vs {paper}%", v.binary_exposed * 100.0);
        }
        detail += "; replication paraphrase shares within tolerance";
    } else {
        detail += "; replication paraphrase runs not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6. Fixed effects against dummy-variable OLS
// ---------------------------------------------------------------------------

struct Panel {
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    rows: Vec<String>,
    cols: Vec<String>,
}

/// Every row meets column 0 and row 0 meets every column, so the panel is
/// connected. At least three row clusters keep the CR1 variance away from the
/// two-cluster case where the scores cancel exactly.
fn random_panel(rng: &mut ChaCha8Rng) -> Panel {
    let (r, c, p) = (rng.gen_range(3..=6), rng.gen_range(2..=5), rng.gen_range(1..=2));
    let alpha: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut panel = Panel { y: vec![], x: vec![vec![]; p], rows: vec![], cols: vec![] };
    for i in 0..r {
        for j in 0..c {
            if i == 0 || j == 0 || rng.gen_bool(0.7) {
                let xs: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..1.0)).collect();
                let fit: f64 = xs.iter().zip(&beta).map(|(a, b)| a * b).sum();
                panel.y.push(alpha[i] + gamma[j] + fit + rng.gen_range(-0.3..0.3));
                for (col, v) in panel.x.iter_mut().zip(xs) {
                    col.push(v);
                }
                panel.rows.push(format!("r{i}"));
                panel.cols.push(format!("c{j}"));
            }
        }
    }
    panel
}

fn levels(v: &[String]) -> Vec<&String> {
    v.iter().collect::<BTreeSet<_>>().into_iter().collect()
}

/// OLS on the regressors, every row dummy and all but the first column
/// dummy, with CR1 errors clustered on rows.
fn dummy_ols(p: &Panel) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (levels(&p.rows), levels(&p.cols));
    let (n, q) = (p.y.len(), p.x.len());
    let k = q + rows.len() + cols.len() - 1;
    let x = DMatrix::from_fn(n, k, |i, j| {
        if j < q {
            p.x[j][i]
        } else if j < q + rows.len() {
            (p.rows[i] == *rows[j - q]) as u8 as f64
        } else {
            (p.cols[i] == *cols[j - q - rows.len() + 1]) as u8 as f64
        }
    });
    let y = DVector::from_column_slice(&p.y);
    let qr = x.clone().qr();
    let r_inv = qr.r().try_inverse().expect("full-rank dummy design");
    let beta = &r_inv * (qr.q().transpose() * &y);
    let xtx_inv = &r_inv * r_inv.transpose();
    let e = &y - &x * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for g in &rows {
        let mut s = DVector::zeros(k);
        for i in (0..n).filter(|&i| p.rows[i] == **g) {
            s += x.row(i).transpose() * e[i];
        }
        meat += &s * s.transpose();
    }
    let gn = rows.len() as f64;
    let scale = gn / (gn - 1.0) * (n as f64 - 1.0) / (n - k) as f64;
    let v = &xtx_inv * meat * &xtx_inv * scale;
    ((0..q).map(|j| beta[j]).collect(), (0..q).map(|j| v[(j, j)].max(0.0).sqrt()).collect())
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 200 {
        let p = random_panel(&mut rng);
        let n = p.y.len();
        let k = p.x.len() + levels(&p.rows).len() + levels(&p.cols).len() - 1;
        if n > 50 || n < k + 2 {
            continue;
        }
        let rows: Vec<&str> = p.rows.iter().map(String::as_str).collect();
        let cols: Vec<&str> = p.cols.iter().map(String::as_str).collect();
        let xs: Vec<&[f64]> = p.x.iter().map(Vec::as_slice).collect();
        let fe = fe_regression(&p.y, &xs, &rows, &cols, &rows, DemeanOptions::default()).map_err(|e| e.to_string())?;
        let (b, se) = dummy_ols(&p);
        for j in 0..xs.len() {
            let err = (fe.beta[j] - b[j]).abs().max((fe.se[j] - se[j]).abs());
            worst = worst.max(err);
            ensure!(err <= 1e-8, "panel {checked} (n={n}, k={k}): beta {} vs {}, se {} vs {}", fe.beta[j], b[j], fe.se[j], se[j]);
        }
        checked += 1;
    }
    let mut detail = format!("{checked} panels of at most 50 rows, max |diff| {worst:.1e}");
    let panels = [("gender_panel_occupation.csv", -0.351, 0.119), ("gender_panel_industry.csv", -0.219, 0.041)];
    let mut replicated = 0;
    for (file, paper_b, paper_se) in panels {
        let Some(path) = replication(file) else { continue };
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(|e| e.to_string())?;
        let head = rdr.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| head.iter().position(|h| h == name).ok_or(format!("{file}: no column {name}"));
        let (ci, cc, cy, cx) = (col("iso3")?, col("cell")?, col("female_minus_male_pp")?, col("substitute_x10")?);
        let (mut iso, mut cell, mut y, mut x) = (vec![], vec![], vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            iso.push(rec[ci].to_string());
            cell.push(rec[cc].to_string());
            y.push(rec[cy].parse::<f64>().map_err(|e| e.to_string())?);
            x.push(rec[cx].parse::<f64>().map_err(|e| e.to_string())?);
        }
        let iso_r: Vec<&str> = iso.iter().map(String::as_str).collect();
        let cell_r: Vec<&str> = cell.iter().map(String::as_str).collect();
        let fe = fe_regression(&y, &[&x], &iso_r, &cell_r, &iso_r, DemeanOptions::default()).map_err(|e| e.to_string())?;
        ensure!(within(fe.beta[0], paper_b, 0.005) && within(fe.se[0], paper_se, 0.01), "replication {file}: beta {:.4} ({:.4})", fe.beta[0], fe.se[0]);
        replicated += 1;
    }
    detail += &if replicated > 0 { format!("; {replicated} replication panels within tolerance") } else { "; replication panels not supplied".into() };
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. TreeSHAP against subset enumeration
// ---------------------------------------------------------------------------

/// Tree output with only the features in `mask` known; unknown splits are
/// averaged by training cover.
fn conditional(t: &Tree, node: usize, x: &[f64], mask: u32) -> f64 {
    match &t.nodes()[node] {
        Node::Leaf { value, .. } => *value,
        Node::Split { feature, threshold, left, right, cover } => {
            if mask >> feature & 1 == 1 {
                conditional(t, if x[*feature] <= *threshold { *left } else { *right }, x, mask)
            } else {
                let nodes = t.nodes();
                (nodes[*left].cover() * conditional(t, *left, x, mask) + nodes[*right].cover() * conditional(t, *right, x, mask)) / cover
            }
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn enumerated_shap(forest: &Forest, x: &[f64]) -> Vec<f64> {
    let p = forest.n_features;
    let value = |mask: u32| forest.trees.iter().map(|t| conditional(t, 0, x, mask)).sum::<f64>() / forest.trees.len() as f64;
    (0..p)
        .map(|i| {
            let bit = 1u32 << i;
            (0..1u32 << p)
                .filter(|m| m & bit == 0)
                .map(|m| {
                    let s = m.count_ones() as usize;
                    factorial(s) * factorial(p - s - 1) / factorial(p) * (value(m | bit) - value(m))
                })
                .sum()
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_local = 0.0f64;
    let mut rows_checked = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let p = rng.gen_range(1..=4);
        let n = rng.gen_range(12..40);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(0..6) as f64).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * (v * 0.7).cos()).sum::<f64>() + rng.gen_range(-0.5..0.5)).collect();
        let params = ForestParams { n_trees: rng.gen_range(1..=5), mtry: None, min_leaf: 1, max_depth: Some(rng.gen_range(1..=3)) };
        let forest = fit_forest(&x, &y, params, seed).map_err(|e| e.to_string())?;
        for row in &x {
            let a = tree_shap(&forest, row).map_err(|e| e.to_string())?;
            for (u, v) in a.values.iter().zip(enumerated_shap(&forest, row)) {
                worst = worst.max((u - v).abs());
            }
            let pred = forest.predict(row).map_err(|e| e.to_string())?;
            worst_local = worst_local.max((a.base_value + a.values.iter().sum::<f64>() - pred).abs());
            rows_checked += 1;
        }
    }
    // Local accuracy on deeper forests with more features.
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(750 + seed);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + r[2].abs() + rng.gen_range(-0.1..0.1)).collect();
        let forest = fit_forest(&x, &y, ForestParams { n_trees: 40, ..ForestParams::default() }, seed).map_err(|e| e.to_string())?;
        for row in &x {
            let a = tree_shap(&forest, row).map_err(|e| e.to_string())?;
            let pred = forest.predict(row).map_err(|e| e.to_string())?;
            worst_local = worst_local.max((a.base_value + a.values.iter().sum::<f64>() - pred).abs());
            rows_checked += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(worst <= 1e-9, "max |TreeSHAP - enumeration| = {worst:e}");
    ensure!(worst_local <= 1e-9, "max local accuracy error {worst_local:e}");
    ensure!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    Ok(format!("100 forests (p <= 4, depth <= 3) max diff {worst:.1e}; local accuracy {worst_local:.1e} over {rows_checked} rows; {elapsed:.1?}"))
}

// ---------------------------------------------------------------------------
// 8. Dominance analysis
// ---------------------------------------------------------------------------

/// R² with intercept by SVD least squares, tolerant of dependent columns.
fn r2(cols: &[&[f64]], y: &[f64]) -> f64 {
    let n = y.len();
    let x = DMatrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-12).expect("svd solve");
    let resid = &yv - &x * beta;
    let mean = y.iter().sum::<f64>() / n as f64;
    1.0 - resid.norm_squared() / y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
}

fn orderings(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut tail in orderings(rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let p = rng.gen_range(1..=4);
        let n = rng.gen_range(10..30);
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| cols.iter().enumerate().map(|(j, c)| (j as f64 - 1.5) * c[i]).sum::<f64>() + rng.gen_range(-0.5..0.5)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let d = shapley_r2(&refs, &y).map_err(|e| e.to_string())?;
        let orders = orderings((0..p).collect());
        let mut brute = vec![0.0; p];
        for ord in &orders {
            let mut prev = 0.0;
            for k in 0..p {
                let sub: Vec<&[f64]> = ord[..=k].iter().map(|&j| refs[j]).collect();
                let now = r2(&sub, &y);
                brute[ord[k]] += now - prev;
                prev = now;
            }
        }
        for (c, b) in d.contributions.iter().zip(&brute) {
            worst = worst.max((c - b / orders.len() as f64).abs());
        }
        let sum_err = (d.contributions.iter().sum::<f64>() - d.full_r2).abs();
        ensure!(sum_err <= 1e-9, "seed {seed}: contributions sum off by {sum_err:e}");
        ensure!((d.full_r2 - r2(&refs, &y)).abs() <= 1e-9, "seed {seed}: full R² differs");
    }
    ensure!(worst <= 1e-9, "max |shapley_r2 - ordering average| = {worst:e}");

    let mut dup_worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(850 + seed);
        let n = 20;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * a[i] - b[i] + rng.gen_range(-0.3..0.3)).collect();
        let d = shapley_r2(&[&a, &a, &b], &y).map_err(|e| e.to_string())?;
        dup_worst = dup_worst.max((d.contributions[0] - d.contributions[1]).abs());
        ensure!((d.contributions.iter().sum::<f64>() - d.full_r2).abs() <= 1e-9, "duplicate seed {seed}: sum");
    }
    ensure!(dup_worst <= 1e-9, "duplicated predictors differ by {dup_worst:e}");
    Ok(format!("50 fixtures (p <= 4) max diff {worst:.1e}; duplicates differ by at most {dup_worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 9. Variance decomposition
// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut anova = 0.0f64;
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (r, c) = (rng.gen_range(2..8), rng.gen_range(2..8));
        let missing = seed % 2 == 1;
        let m: Vec<Vec<Option<f64>>> = (0..r)
            .map(|i| {
                (0..c)
                    .map(|j| (i == 0 || j == 0 || !missing || rng.gen_bool(0.75)).then(|| i as f64 * 0.3 - j as f64 * 0.2 + rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let d = variance_decomposition(&m).map_err(|e| e.to_string())?;
        let shares = d.shares.ok_or(format!("seed {seed}: shares undefined on a non-constant matrix"))?;
        worst = worst.max((shares.iter().sum::<f64>() - 1.0).abs());
        if !missing {
            // textbook two-way sums of squares on a complete table
            let v: Vec<Vec<f64>> = m.iter().map(|row| row.iter().map(|x| x.unwrap()).collect()).collect();
            let g = v.iter().flatten().sum::<f64>() / (r * c) as f64;
            let rm: Vec<f64> = v.iter().map(|row| row.iter().sum::<f64>() / c as f64).collect();
            let cm: Vec<f64> = (0..c).map(|j| v.iter().map(|row| row[j]).sum::<f64>() / r as f64).collect();
            let ss_r = c as f64 * rm.iter().map(|x| (x - g).powi(2)).sum::<f64>();
            let ss_c = r as f64 * cm.iter().map(|x| (x - g).powi(2)).sum::<f64>();
            anova = anova.max((d.ss_rows - ss_r).abs()).max((d.ss_cols - ss_c).abs());
        }
        checked += 1;
    }
    ensure!(worst <= 1e-12, "shares miss 1 by {worst:e}");
    ensure!(anova <= 1e-9, "balanced sums of squares differ from the textbook formula by {anova:e}");
    let constant = variance_decomposition(&vec![vec![Some(2.0); 3]; 3]).map_err(|e| e.to_string())?;
    ensure!(constant.shares.is_none(), "constant matrix should have undefined shares");
    let mut detail = format!("{checked} matrices, max |sum - 1| {worst:.1e}; zero-variance input reports no shares");
    if let Some(path) = replication("country_occupation.csv") {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(|e| e.to_string())?;
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            cells.insert((rec[0].to_string(), rec[1].to_string()), rec[2].parse::<f64>().map_err(|e| e.to_string())?);
        }
        let countries: BTreeSet<&String> = cells.keys().map(|k| &k.0).collect();
        let occupations: BTreeSet<&String> = cells.keys().map(|k| &k.1).collect();
        let m: Vec<Vec<Option<f64>>> = countries
            .iter()
            .map(|c| occupations.iter().map(|o| cells.get(&((*c).clone(), (*o).clone())).copied()).collect())
            .collect();
        let s = variance_decomposition(&m).map_err(|e| e.to_string())?.shares.ok_or("replication shares undefined")?;
        // rows are countries, columns occupations
        let (occupation, country, interaction) = (s[1], s[0], s[2]);
        ensure!(
            within(occupation, 0.488, 0.005) && within(country, 0.439, 0.005) && within(interaction, 0.073, 0.005),
            "replication shares occupation {occupation:.4}, country {country:.4}, interaction {interaction:.4}"
        );
        detail += "; replication shares within 0.005";
    } else {
        detail += "; replication matrix not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 10. Majority retention
// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    // All eight triples, enumerated by hand: retained iff at least two votes are valid.
    let table: BTreeMap<[bool; 3], (bool, f64)> = (0u8..8)
        .map(|b| {
            let t = [b & 1 == 1, b & 2 == 2, b & 4 == 4];
            let valid = t.iter().filter(|v| **v).count();
            (t, (valid >= 2, valid.max(3 - valid) as f64 / 3.0))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut store = ReplayStore::default();
    let mut candidates = Vec::new();
    let mut triples = BTreeMap::new();
    for i in 0..1000 {
        let t: [bool; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let (task, isic) = (format!("task-{i}"), format!("{:04}", 1000 + i % 9000));
        for (r, v) in t.iter().enumerate() {
            store.insert(vote_digest(&task, &isic, r as u32), *v);
        }
        triples.insert(task.clone(), t);
        candidates.push(Candidate { task_id: task, isic4: isic, similarity: 0.5 });
    }
    let voter = ReplayVoter(store);
    let (graph, stats) = prune_edges(&candidates, &BTreeMap::new(), &BTreeMap::new(), &voter, 3, 1).map_err(|e| e.to_string())?;
    let mut expected_kept = 0;
    let mut agreement = 0.0;
    for edge in graph.edges() {
        let t = &triples[&edge.task_id];
        let (keep, agree) = table[t];
        ensure!(edge.votes.as_slice() == t.as_slice(), "{}: votes {:?} vs {:?}", edge.task_id, edge.votes, t);
        ensure!(edge.retained() == keep, "{}: votes {t:?} retained {}", edge.task_id, edge.retained());
        expected_kept += keep as usize;
        agreement += agree;
    }
    ensure!(graph.len() == 1000, "graph holds {} edges", graph.len());
    ensure!(stats.retained == expected_kept, "retained {} vs {expected_kept}", stats.retained);
    let mean = stats.mean_agreement.ok_or("no mean agreement")?;
    ensure!(within(mean, agreement / 1000.0, 1e-12), "mean agreement {mean} vs {}", agreement / 1000.0);
    let mut detail = format!("1,000 random vote triples: {expected_kept} retained, matches enumeration");

    let files = ["linkage/candidates.csv", "linkage/tasks.csv", "linkage/activities.csv", "linkage/votes.json"];
    if let Some(paths) = files.iter().map(|f| replication(f)).collect::<Option<Vec<_>>>() {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&paths[0]).map_err(|e| e.to_string())?;
        let cands = rdr.deserialize::<Candidate>().collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        let texts = |p: &Path, id: &str| -> Result<BTreeMap<String, String>, String> {
            Ok(load_texts(open(p).map_err(|e| e.to_string())?, id, "text").map_err(|e| e.to_string())?.into_iter().collect())
        };
        let voter = ReplayVoter(ReplayStore::load(open(&paths[3]).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?);
        let (_, s) = prune_edges(&cands, &texts(&paths[1], "task_id")?, &texts(&paths[2], "isic4")?, &voter, 3, 1).map_err(|e| e.to_string())?;
        let agree = s.mean_agreement.unwrap_or(0.0) * 100.0;
        ensure!(s.candidates == 18_968 && s.retained == 12_294, "replication kept {} of {}", s.retained, s.candidates);
        ensure!(within(agree, 96.6, 0.1), "replication mean agreement {agree:.2}%");
        detail += "; replication vote log reproduces 12,294 of 18,968";
    } else {
        detail += "; replication vote log not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 11. Partial correlation
// ---------------------------------------------------------------------------

fn centred(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// `v` with its projection on the centred control removed, mean kept.
fn orthogonal_to(v: &[f64], c: &[f64]) -> Vec<f64> {
    let cc = centred(c);
    let vc = centred(v);
    let k = vc.iter().zip(&cc).map(|(a, b)| a * b).sum::<f64>() / cc.iter().map(|b| b * b).sum::<f64>();
    v.iter().zip(&cc).map(|(a, b)| a - k * b).collect()
}

fn criterion_11() -> Outcome {
    let mut worst_irrelevant = 0.0f64;
    let mut worst_absorbed = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let n = rng.gen_range(8..60);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y0: Vec<f64> = x0.iter().map(|v| 0.6 * v + rng.gen_range(-1.0..1.0)).collect();
        let (x, y) = (orthogonal_to(&x0, &c), orthogonal_to(&y0, &c));
        let partial = partial_correlation_slices(&x, &y, &[&c]).map_err(|e| e.to_string())?;
        let plain = pearson_slices(&x, &y).map_err(|e| e.to_string())?;
        worst_irrelevant = worst_irrelevant.max((partial.r - plain).abs());

        let absorbed = partial_correlation_slices(&x0, &c, &[&c]).map_err(|e| e.to_string())?;
        ensure!(absorbed.absorbed, "seed {seed}: y = control not flagged as absorbed");
        worst_absorbed = worst_absorbed.max(absorbed.r.abs());
    }
    ensure!(worst_irrelevant <= 1e-9, "irrelevant control moves r by {worst_irrelevant:e}");
    ensure!(worst_absorbed <= 1e-9, "absorbed partial r = {worst_absorbed:e}");
    let mut detail = format!("irrelevant control max diff {worst_irrelevant:.1e}; y = control gives r = 0 (50 fixtures each)");
    if let Some(path) = replication("aipi.csv") {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(|e| e.to_string())?;
        let head = rdr.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| head.iter().position(|h| h == name).ok_or(format!("aipi.csv: no column {name}"));
        let (ci, ca, cp, cg) = (col("iso3")?, col("ai_material_share")?, col("aipi")?, col("log_gdp_pc")?);
        let (mut keys, mut a, mut p, mut g) = (vec![], vec![], vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let vals: Option<Vec<f64>> = [ca, cp, cg].iter().map(|&i| rec[i].parse().ok()).collect();
            if let Some(v) = vals {
                keys.push(rec[ci].to_string());
                a.push(v[0]);
                p.push(v[1]);
                g.push(v[2]);
            }
        }
        let partial = partial_correlation_slices(&a, &p, &[&g]).map_err(|e| e.to_string())?;
        ensure!(within(partial.r, 0.417, 0.01), "replication partial r {:.4}", partial.r);
        let sa = Series::new(keys.iter().cloned().zip(a.iter().copied())).map_err(|e| e.to_string())?;
        let sp = Series::new(keys.iter().cloned().zip(p.iter().copied())).map_err(|e| e.to_string())?;
        let loo = leave_one_out(&sa, &sp, pearson_slices).map_err(|e| e.to_string())?;
        ensure!(loo.min >= 0.895 && loo.max <= 0.907, "replication LOO range [{:.4}, {:.4}]", loo.min, loo.max);
        detail += "; replication partial r and LOO range within tolerance";
    } else {
        detail += "; replication country data not supplied";
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 12. Determinism
// ---------------------------------------------------------------------------

fn tree_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// The `atlas` binary from the same target directory; `cargo test
/// --workspace` builds it alongside this test. `ATLAS_BIN` overrides.
fn atlas_binary() -> Result<PathBuf, String> {
    if let Some(p) = std::env::var_os("ATLAS_BIN") {
        return Ok(PathBuf::from(p));
    }
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let dir = exe.parent().and_then(Path::parent).ok_or("unexpected test binary location")?;
    let bin = dir.join(format!("atlas{}", std::env::consts::EXE_SUFFIX));
    ensure!(bin.exists(), "{} not found; build it with `cargo build -p atlas-cli` or set ATLAS_BIN", bin.display());
    Ok(bin)
}

fn criterion_12() -> Outcome {
    let bin = atlas_binary()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = fixtures().join("config.json");
    let mut runs = Vec::new();
    for (name, jobs) in [("run_a", "1"), ("run_b", "1"), ("run_c", "8")] {
        let out = tmp.path().join(name);
        let status = Command::new(&bin)
            .args(["report", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .env_remove("ATLAS_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "{name} failed: {}", String::from_utf8_lossy(&status.stderr));
        runs.push(tree_bytes(&out)?);
    }
    let names: BTreeSet<&String> = runs.iter().flat_map(|r| r.keys()).collect();
    for name in &names {
        let a = runs[0].get(*name);
        ensure!(runs[1].get(*name) == a, "{name} differs between two single-worker runs");
        ensure!(runs[2].get(*name) == a, "{name} differs between 1 and 8 workers");
    }
    ensure!(names.len() > 20, "only {} files written", names.len());
    Ok(format!("{} files byte-identical across 2 runs and 1 vs 8 workers", names.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    // libtest-style flags passed by `cargo test` are ignored.
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("distribution counts", criterion_1),
        ("denominator identity", criterion_2),
        ("polarisation identity", criterion_3),
        ("self-agreement", criterion_4),
        ("paraphrase stability", criterion_5),
        ("fixed effects vs dummy OLS", criterion_6),
        ("TreeSHAP exactness", criterion_7),
        ("dominance analysis", criterion_8),
        ("variance decomposition", criterion_9),
        ("majority retention", criterion_10),
        ("partial correlation", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
