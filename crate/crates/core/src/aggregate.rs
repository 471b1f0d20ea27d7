//! Country and group summaries, pathway states, transition matrices,
//! polarisation/tilt and benchmark-ladder deviations.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{CountryRegistry, LabelDataset};
use crate::numeric::compensated_mean;
use crate::types::{AiFunction, BenchmarkContext, Channel, CountryContext, ExposedMargin, IncomeGroup, TaskLabelRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no records for country {0}")]
    UnknownCountry(String),
    #[error("{0} has no exposed tasks")]
    NoExposed(String),
    #[error("{0} has no classified income group")]
    Unclassified(String),
    #[error("{0} shares no tasks with its benchmark")]
    EmptyOverlap(String),
    #[error("task sets differ: {only_a} only in the first, {only_b} only in the second")]
    MismatchedTasks { only_a: usize, only_b: usize },
    #[error("country {0} is not in the registry")]
    Unregistered(String),
}

/// Substitute / augment / both shares under some denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginShares {
    pub substitute: f64,
    pub augment: f64,
    pub both: f64,
}

impl MarginShares {
    pub fn from_array(a: [f64; 3]) -> Self {
        MarginShares { substitute: a[0], augment: a[1], both: a[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.substitute, self.augment, self.both]
    }

    pub fn get(self, m: ExposedMargin) -> f64 {
        self.to_array()[m.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySummary {
    /// ISO3 code, or a benchmark tag for context-free / income-group runs.
    pub iso3: String,
    pub n_tasks: u64,
    pub n_exposed: u64,
    pub n_high: u64,
    /// Exposed tasks whose margin is unclear; excluded from within shares.
    pub n_unclear_exposed: u64,
    /// Exposed tasks with channel none; the residual of `channel_shares_exposed`.
    pub n_channel_none_exposed: u64,
    pub n_ai_material_exposed: u64,
    pub mean_level: f64,
    pub exposed_share: f64,
    pub high_share: f64,
    pub margin_shares_all: MarginShares,
    pub margin_shares_within: Option<MarginShares>,
    pub channel_shares_exposed: Option<BTreeMap<Channel, f64>>,
    pub ai_material_share_exposed: Option<f64>,
    pub ai_function_mix: Option<BTreeMap<AiFunction, f64>>,
}

impl CountrySummary {
    /// Exposed tasks entering the within-exposed margin shares.
    pub fn n_margin_classified(&self) -> u64 {
        self.n_exposed - self.n_unclear_exposed
    }
}

fn share(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// Summarizes one record set. Counts are integers, so shares do not depend
/// on traversal order.
pub fn summarize_records<'a>(iso3: &str, records: impl IntoIterator<Item = &'a TaskLabelRecord>) -> Option<CountrySummary> {
    let mut n = 0u64;
    let mut level_sum = 0u64;
    let mut exposed = 0u64;
    let mut high = 0u64;
    let mut margins = [0u64; 3];
    let mut unclear = 0u64;
    let mut channels = [0u64; 5];
    let mut channel_none = 0u64;
    let mut ai = 0u64;
    let mut functions = [0u64; 4];
    for r in records {
        n += 1;
        level_sum += r.exposure.value() as u64;
        if !r.is_exposed() {
            continue;
        }
        exposed += 1;
        high += (r.exposure.value() == 3) as u64;
        match r.margin.exposed_margin() {
            Some(m) => margins[m.index()] += 1,
            None => unclear += 1,
        }
        match Channel::ACTIVE.iter().position(|c| *c == r.channel) {
            Some(i) => channels[i] += 1,
            None => channel_none += 1,
        }
        if r.ai_material {
            ai += 1;
            if let Some(i) = AiFunction::ACTIVE.iter().position(|f| *f == r.ai_function) {
                functions[i] += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let classified = exposed - unclear;
    let ai_with_function: u64 = functions.iter().sum();
    Some(CountrySummary {
        iso3: iso3.to_string(),
        n_tasks: n,
        n_exposed: exposed,
        n_high: high,
        n_unclear_exposed: unclear,
        n_channel_none_exposed: channel_none,
        n_ai_material_exposed: ai,
        mean_level: share(level_sum, n),
        exposed_share: share(exposed, n),
        high_share: share(high, n),
        margin_shares_all: MarginShares::from_array(margins.map(|c| share(c, n))),
        margin_shares_within: (classified > 0).then(|| MarginShares::from_array(margins.map(|c| share(c, classified)))),
        channel_shares_exposed: (exposed > 0)
            .then(|| Channel::ACTIVE.iter().zip(channels).map(|(c, k)| (*c, share(k, exposed))).collect()),
        ai_material_share_exposed: (exposed > 0).then(|| share(ai, exposed)),
        ai_function_mix: (ai_with_function > 0).then(|| {
            AiFunction::ACTIVE.iter().zip(functions).map(|(f, k)| (*f, share(k, ai_with_function))).collect()
        }),
    })
}

pub fn country_summary(dataset: &LabelDataset, iso3: &str) -> Result<CountrySummary, AggregateError> {
    summarize_records(iso3, dataset.country_records(iso3)).ok_or_else(|| AggregateError::UnknownCountry(iso3.to_string()))
}

/// Summaries for every context in the dataset, sorted by tag.
pub fn summarize_all(dataset: &LabelDataset) -> Vec<CountrySummary> {
    let countries = dataset.countries();
    countries
        .par_iter()
        .map(|c| country_summary(dataset, c).expect("country taken from the dataset"))
        .collect()
}

// ---------------------------------------------------------------------------
// Polarisation and tilt
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polarisation {
    /// Within-exposed substitute + augment.
    pub p: f64,
    /// sub / (sub + aug); `None` when P = 0.
    pub t: Option<f64>,
}

pub fn polarisation(summary: &CountrySummary) -> Result<Polarisation, AggregateError> {
    let w = summary.margin_shares_within.ok_or_else(|| AggregateError::NoExposed(summary.iso3.clone()))?;
    let p = w.substitute + w.augment;
    Ok(Polarisation { p, t: (p > 0.0).then(|| w.substitute / p) })
}

// ---------------------------------------------------------------------------
// Group means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    IncomeGroup,
    Region,
    RegionIncome,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "income_group" | "income" => Ok(Grouping::IncomeGroup),
            "region" => Ok(Grouping::Region),
            "region_income" => Ok(Grouping::RegionIncome),
            _ => Err(format!("unknown grouping {s:?}")),
        }
    }
}

impl Grouping {
    pub fn key(self, c: &CountryContext) -> String {
        match self {
            Grouping::IncomeGroup => c.income_group.to_string(),
            Grouping::Region => c.region.to_string(),
            Grouping::RegionIncome => format!("{}/{}", c.region, c.income_group),
        }
    }
}

/// Flat named view of the numeric fields of a summary, in a fixed order.
pub fn summary_metrics(s: &CountrySummary) -> Vec<(String, Option<f64>)> {
    let mut out = vec![
        ("mean_level".to_string(), Some(s.mean_level)),
        ("exposed_share".to_string(), Some(s.exposed_share)),
        ("high_share".to_string(), Some(s.high_share)),
    ];
    for m in ExposedMargin::ALL3 {
        out.push((format!("margin_all_{m}"), Some(s.margin_shares_all.get(m))));
    }
    for m in ExposedMargin::ALL3 {
        out.push((format!("margin_within_{m}"), s.margin_shares_within.map(|w| w.get(m))));
    }
    for c in Channel::ACTIVE {
        out.push((format!("channel_{c}"), s.channel_shares_exposed.as_ref().map(|m| m[&c])));
    }
    out.push(("ai_material_share_exposed".to_string(), s.ai_material_share_exposed));
    for f in AiFunction::ACTIVE {
        out.push((format!("ai_function_{f}"), s.ai_function_mix.as_ref().map(|m| m[&f])));
    }
    let pol = polarisation(s).ok();
    out.push(("polarisation_p".to_string(), pol.map(|p| p.p)));
    out.push(("tilt_t".to_string(), pol.and_then(|p| p.t)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub name: String,
    pub mean: Option<f64>,
    /// Countries with a defined value.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n_countries: usize,
    pub metrics: Vec<GroupMetric>,
}

impl GroupSummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).and_then(|m| m.mean)
    }
}

/// Unweighted means across countries within each group. Countries are
/// traversed in ISO3 order regardless of input order.
pub fn group_summary(
    summaries: &[CountrySummary],
    registry: &CountryRegistry,
    grouping: Grouping,
) -> Result<Vec<GroupSummary>, AggregateError> {
    let mut groups: BTreeMap<String, BTreeMap<&str, &CountrySummary>> = BTreeMap::new();
    for s in summaries {
        let ctx = registry.get(&s.iso3).ok_or_else(|| AggregateError::Unregistered(s.iso3.clone()))?;
        groups.entry(grouping.key(ctx)).or_default().insert(&s.iso3, s);
    }
    Ok(groups
        .into_iter()
        .map(|(group, members)| {
            let rows: Vec<Vec<(String, Option<f64>)>> = members.values().map(|s| summary_metrics(s)).collect();
            let metrics = rows[0]
                .iter()
                .enumerate()
                .map(|(i, (name, _))| {
                    let vals: Vec<f64> = rows.iter().filter_map(|r| r[i].1).collect();
                    GroupMetric { name: name.clone(), mean: compensated_mean(vals.iter().copied()), n: vals.len() }
                })
                .collect();
            GroupSummary { group, n_countries: members.len(), metrics }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Pathway states and transitions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathwayState {
    NotExposed,
    Substitute,
    Augment,
    Both,
}

impl PathwayState {
    pub const ALL: [PathwayState; 4] =
        [PathwayState::NotExposed, PathwayState::Substitute, PathwayState::Augment, PathwayState::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PathwayState::NotExposed => "not_exposed",
            PathwayState::Substitute => "substitute",
            PathwayState::Augment => "augment",
            PathwayState::Both => "both",
        }
    }
}

/// `None` is the anomaly bucket: an exposed record with an unclear margin.
pub fn pathway_state(record: &TaskLabelRecord) -> Option<PathwayState> {
    if !record.is_exposed() {
        return Some(PathwayState::NotExposed);
    }
    record.margin.exposed_margin().map(|m| match m {
        ExposedMargin::Substitute => PathwayState::Substitute,
        ExposedMargin::Augment => PathwayState::Augment,
        ExposedMargin::Both => PathwayState::Both,
    })
}

/// Modal pathway per task across the countries of each group. Anomalous
/// records do not vote; a task whose records are all anomalous maps to
/// `None`. Ties go to the lexicographically smallest state name, the same
/// rule ingest uses for categorical fields.
pub fn modal_pathways(
    dataset: &LabelDataset,
    registry: &CountryRegistry,
    grouping: Grouping,
) -> BTreeMap<String, BTreeMap<String, Option<PathwayState>>> {
    let mut tallies: BTreeMap<String, BTreeMap<String, [u64; 4]>> = BTreeMap::new();
    for r in dataset.records() {
        let Some(ctx) = registry.get(&r.country) else { continue };
        let counts = tallies.entry(grouping.key(ctx)).or_default().entry(r.task_id.clone()).or_default();
        if let Some(s) = pathway_state(r) {
            counts[s.index()] += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(g, tasks)| {
            let states = tasks.into_iter().map(|(t, counts)| (t, modal_state(&counts))).collect();
            (g, states)
        })
        .collect()
}

fn modal_state(counts: &[u64; 4]) -> Option<PathwayState> {
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    PathwayState::ALL.into_iter().filter(|s| counts[s.index()] == best).min_by_key(|s| s.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; 4]; 4],
    /// Row-stochastic shares; rows of empty source states are all zero.
    pub shares: [[f64; 4]; 4],
    pub row_totals: [u64; 4],
    /// Tasks dropped because either side was in the anomaly bucket.
    pub excluded_anomalies: u64,
}

pub fn transition_matrix(
    a: &BTreeMap<String, Option<PathwayState>>,
    b: &BTreeMap<String, Option<PathwayState>>,
) -> Result<TransitionMatrix, AggregateError> {
    let only_a = a.keys().filter(|k| !b.contains_key(*k)).count();
    let only_b = b.keys().filter(|k| !a.contains_key(*k)).count();
    if only_a > 0 || only_b > 0 {
        return Err(AggregateError::MismatchedTasks { only_a, only_b });
    }
    let mut counts = [[0u64; 4]; 4];
    let mut excluded = 0;
    for (task, sa) in a {
        match (sa, b[task]) {
            (Some(x), Some(y)) => counts[x.index()][y.index()] += 1,
            _ => excluded += 1,
        }
    }
    let row_totals = counts.map(|row| row.iter().sum::<u64>());
    let mut shares = [[0.0; 4]; 4];
    for i in 0..4 {
        if row_totals[i] > 0 {
            for j in 0..4 {
                shares[i][j] = share(counts[i][j], row_totals[i]);
            }
        }
    }
    Ok(TransitionMatrix { counts, shares, row_totals, excluded_anomalies: excluded })
}

// ---------------------------------------------------------------------------
// Benchmark ladder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDeviation {
    pub iso3: String,
    pub income_group: IncomeGroup,
    /// Mean of (country level − benchmark level) over shared tasks.
    pub mean_deviation: f64,
    pub n_tasks: usize,
}

pub fn benchmark_deviation(
    country_labels: &LabelDataset,
    benchmark_labels: &LabelDataset,
    registry: &CountryRegistry,
    iso3: &str,
) -> Result<BenchmarkDeviation, AggregateError> {
    let ctx = registry.get(iso3).ok_or_else(|| AggregateError::Unregistered(iso3.to_string()))?;
    if !ctx.income_group.is_classified() {
        return Err(AggregateError::Unclassified(iso3.to_string()));
    }
    let tag = BenchmarkContext::IncomeGroup(ctx.income_group).tag();
    let diffs: Vec<f64> = country_labels
        .country_records(iso3)
        .filter_map(|r| {
            benchmark_labels.get(&tag, &r.task_id).map(|b| r.exposure.as_f64() - b.exposure.as_f64())
        })
        .collect();
    let mean = compensated_mean(diffs.iter().copied()).ok_or_else(|| AggregateError::EmptyOverlap(iso3.to_string()))?;
    Ok(BenchmarkDeviation { iso3: iso3.to_string(), income_group: ctx.income_group, mean_deviation: mean, n_tasks: diffs.len() })
}

/// Deviations for every ISO3 country in `country_labels`, plus the
/// countries skipped and why.
pub fn benchmark_deviations(
    country_labels: &LabelDataset,
    benchmark_labels: &LabelDataset,
    registry: &CountryRegistry,
) -> (Vec<BenchmarkDeviation>, Vec<(String, AggregateError)>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for c in country_labels.countries().into_iter().filter(|c| crate::types::is_iso3(c)) {
        match benchmark_deviation(country_labels, benchmark_labels, registry, &c) {
            Ok(d) => ok.push(d),
            Err(e) => skipped.push((c, e)),
        }
    }
    (ok, skipped)
}

/// Task ids present for every listed context.
pub fn common_tasks(dataset: &LabelDataset, contexts: &[String]) -> BTreeSet<String> {
    let mut iter = contexts.iter();
    let Some(first) = iter.next() else { return BTreeSet::new() };
    let mut common: BTreeSet<String> = dataset.country_records(first).map(|r| r.task_id.clone()).collect();
    for c in iter {
        let tasks: BTreeSet<String> = dataset.country_records(c).map(|r| r.task_id.clone()).collect();
        common.retain(|t| tasks.contains(t));
    }
    common
}

/// CSV header matching [`summary_row`].
pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = ["iso3", "n_tasks", "n_exposed", "n_high", "n_unclear_exposed", "n_channel_none_exposed", "n_ai_material_exposed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(metric_names());
    h
}

fn metric_names() -> Vec<String> {
    let probe = CountrySummary {
        iso3: String::new(),
        n_tasks: 0,
        n_exposed: 0,
        n_high: 0,
        n_unclear_exposed: 0,
        n_channel_none_exposed: 0,
        n_ai_material_exposed: 0,
        mean_level: 0.0,
        exposed_share: 0.0,
        high_share: 0.0,
        margin_shares_all: MarginShares::default(),
        margin_shares_within: None,
        channel_shares_exposed: None,
        ai_material_share_exposed: None,
        ai_function_mix: None,
    };
    summary_metrics(&probe).into_iter().map(|(n, _)| n).collect()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_row(s: &CountrySummary) -> Vec<String> {
    let mut row = vec![
        s.iso3.clone(),
        s.n_tasks.to_string(),
        s.n_exposed.to_string(),
        s.n_high.to_string(),
        s.n_unclear_exposed.to_string(),
        s.n_channel_none_exposed.to_string(),
        s.n_ai_material_exposed.to_string(),
    ];
    row.extend(summary_metrics(s).into_iter().map(|(_, v)| fmt_opt(v)));
    row
}
