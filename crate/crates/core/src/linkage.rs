//! Occupation bridge (task -> SOC -> ISCO) and industry graph
//! (task -> ISIC4 class -> division).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Grouping;
use crate::ingest::{parse_num, CountryRegistry, IngestError, LabelDataset, Table};
use crate::numeric::compensated_sum;
use crate::profile::ExposureProfile;
use crate::provider::{cosine, with_retries, EdgeVoter, EmbeddingProvider, ProviderError};
use crate::reweight::{Sex, WeightVector};
use crate::types::ExposedMargin;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum LinkageError {
    #[error("{unit}: weight {weight} for {member} is negative or not finite")]
    InvalidWeight { unit: String, member: String, weight: f64 },
    #[error("{unit}: weights sum to {sum}, expected 1")]
    Unnormalized { unit: String, sum: f64 },
    #[error("{unit}: duplicate entry for {member}")]
    Duplicate { unit: String, member: String },
    #[error("SOC {0} has no bridge row")]
    NoBridgeRow(String),
    #[error("top_k must be at least 1")]
    BadTopK,
    #[error("votes_per_edge must be odd and at least 1, got {0}")]
    BadVoteCount(u32),
    #[error("zero-norm embedding for {0}")]
    ZeroNorm(String),
    #[error("invalid ISIC4 class {0:?}")]
    InvalidIsic(String),
    #[error("division {0} has no retained classes")]
    NoClasses(String),
    #[error("duplicate edge {task_id} -> {isic4}")]
    DuplicateEdge { task_id: String, isic4: String },
    #[error("graph line {line}: {message}")]
    GraphLine { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized weighted membership lists, keyed by a parent unit.
fn normalized(
    rows: Vec<(String, String, f64)>,
) -> Result<BTreeMap<String, Vec<(String, f64)>>, LinkageError> {
    let mut raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (unit, member, w) in rows {
        if !(w.is_finite() && w >= 0.0) {
            return Err(LinkageError::InvalidWeight { unit, member, weight: w });
        }
        if raw.entry(unit.clone()).or_default().insert(member.clone(), w).is_some() {
            return Err(LinkageError::Duplicate { unit, member });
        }
    }
    let mut out = BTreeMap::new();
    for (unit, members) in raw {
        let total = compensated_sum(members.values().copied());
        if total <= 0.0 {
            return Err(LinkageError::Unnormalized { unit, sum: total });
        }
        out.insert(unit, members.into_iter().map(|(m, w)| (m, w / total)).collect());
    }
    Ok(out)
}

fn check_sums(map: &BTreeMap<String, Vec<(String, f64)>>) -> Result<(), LinkageError> {
    for (unit, members) in map {
        let mut seen = BTreeSet::new();
        for (m, w) in members {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(LinkageError::InvalidWeight { unit: unit.clone(), member: m.clone(), weight: *w });
            }
            if !seen.insert(m) {
                return Err(LinkageError::Duplicate { unit: unit.clone(), member: m.clone() });
            }
        }
        let sum = compensated_sum(members.iter().map(|(_, w)| *w));
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(LinkageError::Unnormalized { unit: unit.clone(), sum });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Occupation bridge
// ---------------------------------------------------------------------------

/// Task weights w_to per SOC occupation, summing to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskWeightMap {
    occupations: BTreeMap<String, Vec<(String, f64)>>,
}

impl TaskWeightMap {
    /// Takes already-normalized weights.
    pub fn new(occupations: BTreeMap<String, Vec<(String, f64)>>) -> Result<Self, LinkageError> {
        check_sums(&occupations)?;
        Ok(TaskWeightMap { occupations })
    }

    /// Normalizes raw (soc, task_id, weight) rows within each occupation.
    pub fn from_raw(rows: Vec<(String, String, f64)>) -> Result<Self, LinkageError> {
        Ok(TaskWeightMap { occupations: normalized(rows)? })
    }

    pub fn occupations(&self) -> &BTreeMap<String, Vec<(String, f64)>> {
        &self.occupations
    }
}

/// CSV with `soc,task_id` and an optional `weight` column (uniform when absent).
pub fn load_task_weights<R: Read>(reader: R) -> Result<TaskWeightMap, LinkageError> {
    let t = Table::read(reader)?;
    let (soc, task) = (t.column("soc")?, t.column("task_id")?);
    let weight = t.optional_column("weight");
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let w = match weight {
            Some(i) => parse_num(*line, "weight", &rec[i])?,
            None => 1.0,
        };
        rows.push((rec[soc].to_string(), rec[task].to_string(), w));
    }
    TaskWeightMap::from_raw(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeVariant {
    Weighted,
    Modal,
}

/// Shares m_ok from SOC occupations to ISCO groups, summing to one per SOC.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeShares {
    pub variant: BridgeVariant,
    rows: BTreeMap<String, Vec<(String, f64)>>,
}

impl BridgeShares {
    pub fn new(rows: BTreeMap<String, Vec<(String, f64)>>) -> Result<Self, LinkageError> {
        check_sums(&rows)?;
        Ok(BridgeShares { variant: BridgeVariant::Weighted, rows })
    }

    pub fn from_raw(rows: Vec<(String, String, f64)>) -> Result<Self, LinkageError> {
        Ok(BridgeShares { variant: BridgeVariant::Weighted, rows: normalized(rows)? })
    }

    pub fn identity<'a>(socs: impl IntoIterator<Item = &'a str>) -> Self {
        let rows = socs.into_iter().map(|s| (s.to_string(), vec![(s.to_string(), 1.0)])).collect();
        BridgeShares { variant: BridgeVariant::Weighted, rows }
    }

    pub fn rows(&self) -> &BTreeMap<String, Vec<(String, f64)>> {
        &self.rows
    }

    /// Each SOC sends all of its mass to its largest-share ISCO group
    /// (ties to the smallest ISCO code).
    pub fn modal(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|(soc, shares)| {
                let best = shares
                    .iter()
                    .fold(None::<&(String, f64)>, |acc, cand| match acc {
                        Some(b) if b.1 > cand.1 || (b.1 == cand.1 && b.0 <= cand.0) => Some(b),
                        _ => Some(cand),
                    })
                    .expect("bridge rows are non-empty");
                (soc.clone(), vec![(best.0.clone(), 1.0)])
            })
            .collect();
        BridgeShares { variant: BridgeVariant::Modal, rows }
    }

    /// Merges ISCO codes sharing their first `digits` characters.
    pub fn truncate(&self, digits: usize) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|(soc, shares)| {
                let mut merged: BTreeMap<String, f64> = BTreeMap::new();
                for (k, m) in shares {
                    let code: String = k.chars().take(digits).collect();
                    *merged.entry(code).or_default() += m;
                }
                (soc.clone(), merged.into_iter().collect())
            })
            .collect();
        BridgeShares { variant: self.variant, rows }
    }
}

/// CSV with `soc,isco,share`; shares are normalized per SOC.
pub fn load_bridge<R: Read>(reader: R) -> Result<BridgeShares, LinkageError> {
    let t = Table::read(reader)?;
    let (soc, isco, share) = (t.column("soc")?, t.column("isco")?, t.column("share")?);
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        rows.push((rec[soc].to_string(), rec[isco].to_string(), parse_num(*line, "share", &rec[share])?));
    }
    BridgeShares::from_raw(rows)
}

/// A unit-level value with the weight mass behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitValue {
    pub profile: ExposureProfile,
    /// SOC: share of w_to present in the country. ISCO: received bridge mass.
    pub mass: f64,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SocSummary {
    pub values: BTreeMap<String, UnitValue>,
    /// Occupations with none of their tasks labelled for the country.
    pub skipped: Vec<String>,
    /// Total task weight missing across the occupations that were kept.
    pub dropped_mass: f64,
}

pub fn task_profiles(dataset: &LabelDataset, iso3: &str) -> BTreeMap<String, ExposureProfile> {
    dataset.country_records(iso3).map(|r| (r.task_id.clone(), ExposureProfile::of_record(r))).collect()
}

/// Ê_o = Σ w_to E_t over the tasks available for the country, with the
/// weights renormalized over those tasks.
pub fn soc_summary(dataset: &LabelDataset, iso3: &str, weights: &TaskWeightMap) -> SocSummary {
    soc_summary_from_profiles(&task_profiles(dataset, iso3), weights)
}

pub fn soc_summary_from_profiles(tasks: &BTreeMap<String, ExposureProfile>, weights: &TaskWeightMap) -> SocSummary {
    let mut out = SocSummary::default();
    let mut dropped = Vec::new();
    for (soc, members) in &weights.occupations {
        let present: Vec<(f64, &ExposureProfile)> =
            members.iter().filter_map(|(t, w)| tasks.get(t).map(|p| (*w, p))).collect();
        match ExposureProfile::weighted_mean(present.iter().copied()) {
            Some(profile) => {
                let mass = compensated_sum(present.iter().map(|(w, _)| *w));
                dropped.push(1.0 - mass);
                out.values.insert(soc.clone(), UnitValue { profile, mass, n_members: present.len() });
            }
            None => out.skipped.push(soc.clone()),
        }
    }
    out.dropped_mass = compensated_sum(dropped);
    out
}

/// Ê_k = Σ_o m_ok Ê_o / Σ_o m_ok. Dividing by the received mass keeps every
/// ISCO value a convex combination of SOC values.
pub fn isco_summary(
    soc_values: &BTreeMap<String, ExposureProfile>,
    bridge: &BridgeShares,
) -> Result<BTreeMap<String, UnitValue>, LinkageError> {
    let mut incoming: BTreeMap<&str, Vec<(f64, &ExposureProfile)>> = BTreeMap::new();
    for (soc, value) in soc_values {
        let row = bridge.rows.get(soc).ok_or_else(|| LinkageError::NoBridgeRow(soc.clone()))?;
        for (k, m) in row {
            if *m > 0.0 {
                incoming.entry(k).or_default().push((*m, value));
            }
        }
    }
    Ok(incoming
        .into_iter()
        .filter_map(|(k, items)| {
            let mass = compensated_sum(items.iter().map(|(m, _)| *m));
            ExposureProfile::weighted_mean(items.iter().copied())
                .map(|profile| (k.to_string(), UnitValue { profile, mass, n_members: items.len() }))
        })
        .collect())
}

pub fn profiles_of(values: &BTreeMap<String, UnitValue>) -> BTreeMap<String, ExposureProfile> {
    values.iter().map(|(k, v)| (k.clone(), v.profile)).collect()
}

/// Received bridge mass per ISCO group as a weight vector, the linkage-side
/// baseline for employment reweighting.
pub fn linkage_weight_vector(iso3: &str, year: i32, isco: &BTreeMap<String, UnitValue>) -> Option<WeightVector> {
    let counts: BTreeMap<String, f64> = isco.iter().map(|(k, v)| (k.clone(), v.mass)).collect();
    WeightVector::from_counts(iso3, Sex::Total, year, &counts)
}

// ---------------------------------------------------------------------------
// Industry graph
// ---------------------------------------------------------------------------

pub fn isic_division(isic4: &str) -> Result<&str, LinkageError> {
    if isic4.len() == 4 && isic4.bytes().all(|b| b.is_ascii_digit()) {
        Ok(&isic4[..2])
    } else {
        Err(LinkageError::InvalidIsic(isic4.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: String,
    pub isic4: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateParams {
    pub top_k: usize,
    pub floor: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        CandidateParams { top_k: 60, floor: 0.30 }
    }
}

fn embed_all(
    provider: &dyn EmbeddingProvider,
    items: &[(String, String)],
    retries: u32,
) -> Result<Vec<Vec<f64>>, LinkageError> {
    items
        .par_iter()
        .map(|(id, text)| {
            let v = with_retries(retries, || provider.embed(text))?;
            if v.iter().all(|x| *x == 0.0) {
                return Err(LinkageError::ZeroNorm(id.clone()));
            }
            Ok(v)
        })
        .collect()
}

/// For each activity, the `top_k` tasks by cosine similarity at or above
/// `floor`. Equal similarities rank by task id. Output is ordered by class,
/// then rank.
pub fn build_candidates(
    tasks: &[(String, String)],
    activities: &[(String, String)],
    provider: &dyn EmbeddingProvider,
    params: CandidateParams,
) -> Result<Vec<Candidate>, LinkageError> {
    if params.top_k == 0 {
        return Err(LinkageError::BadTopK);
    }
    for (isic4, _) in activities {
        isic_division(isic4)?;
    }
    let task_vecs = embed_all(provider, tasks, 3)?;
    let act_vecs = embed_all(provider, activities, 3)?;
    let mut per_activity: Vec<(String, Vec<Candidate>)> = activities
        .par_iter()
        .zip(act_vecs.par_iter())
        .map(|((isic4, _), av)| {
            let mut scored: Vec<(f64, &str)> = tasks
                .iter()
                .zip(&task_vecs)
                .map(|((id, _), tv)| (cosine(av, tv).expect("non-zero embeddings"), id.as_str()))
                .filter(|(s, _)| *s >= params.floor)
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            scored.truncate(params.top_k);
            let edges = scored
                .into_iter()
                .map(|(similarity, id)| Candidate { task_id: id.to_string(), isic4: isic4.clone(), similarity })
                .collect();
            (isic4.clone(), edges)
        })
        .collect();
    per_activity.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(per_activity.into_iter().flat_map(|(_, e)| e).collect())
}

/// Strict majority of valid votes.
pub fn retention_from_votes(votes: &[bool]) -> bool {
    let valid = votes.iter().filter(|v| **v).count();
    2 * valid > votes.len()
}

pub fn vote_agreement(votes: &[bool]) -> Option<f64> {
    if votes.is_empty() {
        return None;
    }
    let valid = votes.iter().filter(|v| **v).count();
    Some(valid.max(votes.len() - valid) as f64 / votes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub task_id: String,
    pub isic4: String,
    pub similarity: f64,
    pub votes: Vec<bool>,
}

impl EdgeRecord {
    pub fn retained(&self) -> bool {
        retention_from_votes(&self.votes)
    }
}

/// Every voted candidate edge; retention is derived from the votes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndustryGraph {
    edges: BTreeMap<(String, String), EdgeRecord>,
}

impl IndustryGraph {
    pub fn new(records: impl IntoIterator<Item = EdgeRecord>) -> Result<Self, LinkageError> {
        let mut edges = BTreeMap::new();
        for r in records {
            isic_division(&r.isic4)?;
            let key = (r.task_id.clone(), r.isic4.clone());
            if edges.contains_key(&key) {
                return Err(LinkageError::DuplicateEdge { task_id: r.task_id, isic4: r.isic4 });
            }
            edges.insert(key, r);
        }
        Ok(IndustryGraph { edges })
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.edges.values()
    }

    pub fn retained(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.edges.values().filter(|e| e.retained())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Retained tasks per ISIC4 class.
    pub fn class_tasks(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in self.retained() {
            out.entry(e.isic4.as_str()).or_default().push(e.task_id.as_str());
        }
        out
    }

    pub fn divisions(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for e in self.retained() {
            let div = isic_division(&e.isic4).expect("validated on construction");
            out.entry(div.to_string()).or_default().insert(e.isic4.clone());
        }
        out
    }

    pub fn mean_agreement(&self) -> Option<f64> {
        let shares: Vec<f64> = self.edges.values().filter_map(|e| vote_agreement(&e.votes)).collect();
        crate::numeric::compensated_mean(shares)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), LinkageError> {
        for e in self.edges.values() {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, LinkageError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: EdgeRecord = serde_json::from_str(trimmed)
                .map_err(|e| LinkageError::GraphLine { line: i + 1, message: e.to_string() })?;
            records.push(rec);
        }
        Self::new(records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStats {
    pub candidates: usize,
    pub retained: usize,
    pub votes_cast: usize,
    pub mean_agreement: Option<f64>,
}

pub fn prune_stats(graph: &IndustryGraph) -> PruneStats {
    PruneStats {
        candidates: graph.len(),
        retained: graph.retained().count(),
        votes_cast: graph.edges().map(|e| e.votes.len()).sum(),
        mean_agreement: graph.mean_agreement(),
    }
}

/// Collects `votes_per_edge` votes for every candidate. Texts are looked up
/// by id; a missing text is passed as the id itself.
pub fn prune_edges(
    candidates: &[Candidate],
    task_text: &BTreeMap<String, String>,
    activity_text: &BTreeMap<String, String>,
    voter: &dyn EdgeVoter,
    votes_per_edge: u32,
    retries: u32,
) -> Result<(IndustryGraph, PruneStats), LinkageError> {
    if votes_per_edge == 0 || votes_per_edge % 2 == 0 {
        return Err(LinkageError::BadVoteCount(votes_per_edge));
    }
    let records: Vec<EdgeRecord> = candidates
        .par_iter()
        .map(|c| {
            let task = task_text.get(&c.task_id).unwrap_or(&c.task_id);
            let activity = activity_text.get(&c.isic4).unwrap_or(&c.isic4);
            let votes = (0..votes_per_edge)
                .map(|r| with_retries(retries, || voter.vote(task, activity, r)))
                .collect::<Result<Vec<bool>, _>>()?;
            Ok(EdgeRecord { task_id: c.task_id.clone(), isic4: c.isic4.clone(), similarity: c.similarity, votes })
        })
        .collect::<Result<_, LinkageError>>()?;
    let graph = IndustryGraph::new(records)?;
    let stats = prune_stats(&graph);
    Ok((graph, stats))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IndustrySummary {
    /// Unweighted mean over the class's labelled tasks.
    pub classes: BTreeMap<String, UnitValue>,
    /// Unweighted mean over the division's classes.
    pub divisions: BTreeMap<String, UnitValue>,
}

impl IndustrySummary {
    pub fn division(&self, division: &str) -> Result<&UnitValue, LinkageError> {
        self.divisions.get(division).ok_or_else(|| LinkageError::NoClasses(division.to_string()))
    }
}

pub fn industry_summary(dataset: &LabelDataset, iso3: &str, graph: &IndustryGraph) -> IndustrySummary {
    industry_summary_from_profiles(&task_profiles(dataset, iso3), graph)
}

pub fn industry_summary_from_profiles(tasks: &BTreeMap<String, ExposureProfile>, graph: &IndustryGraph) -> IndustrySummary {
    let mut out = IndustrySummary::default();
    for (class, members) in graph.class_tasks() {
        let present: Vec<&ExposureProfile> = members.iter().filter_map(|t| tasks.get(*t)).collect();
        if let Some(profile) = ExposureProfile::mean(present.iter().copied()) {
            out.classes.insert(class.to_string(), UnitValue { profile, mass: 1.0, n_members: present.len() });
        }
    }
    let mut by_division: BTreeMap<&str, Vec<&ExposureProfile>> = BTreeMap::new();
    for (class, v) in &out.classes {
        by_division.entry(isic_division(class).expect("validated")).or_default().push(&v.profile);
    }
    out.divisions = by_division
        .into_iter()
        .map(|(d, ps)| {
            let profile = ExposureProfile::mean(ps.iter().copied()).expect("non-empty");
            (d.to_string(), UnitValue { profile, mass: 1.0, n_members: ps.len() })
        })
        .collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupUnitValue {
    pub profile: ExposureProfile,
    pub n_countries: usize,
}

/// Unweighted mean over countries of each unit's profile, per group.
pub fn rollup_by_group(
    per_country: &BTreeMap<String, BTreeMap<String, ExposureProfile>>,
    registry: &CountryRegistry,
    grouping: Grouping,
) -> BTreeMap<String, BTreeMap<String, GroupUnitValue>> {
    let mut acc: BTreeMap<String, BTreeMap<&str, Vec<&ExposureProfile>>> = BTreeMap::new();
    for (iso3, units) in per_country {
        let Some(ctx) = registry.get(iso3) else { continue };
        let group = acc.entry(grouping.key(ctx)).or_default();
        for (unit, p) in units {
            group.entry(unit).or_default().push(p);
        }
    }
    acc.into_iter()
        .map(|(g, units)| {
            let vals = units
                .into_iter()
                .map(|(u, ps)| {
                    let n = ps.len();
                    (u.to_string(), GroupUnitValue { profile: ExposureProfile::mean(ps).expect("non-empty"), n_countries: n })
                })
                .collect();
            (g, vals)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pocket {
    pub unit: String,
    pub exposed_share: f64,
    pub margin_share: f64,
    pub score: f64,
}

/// Ranks units by exposed share × within-exposed margin share, descending,
/// ties by unit id.
pub fn margin_pockets(units: impl IntoIterator<Item = (String, f64, f64)>, top_n: usize) -> Vec<Pocket> {
    let mut ranked: Vec<Pocket> = units
        .into_iter()
        .map(|(unit, exposed_share, margin_share)| Pocket {
            unit,
            exposed_share,
            margin_share,
            score: exposed_share * margin_share,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.unit.cmp(&b.unit)));
    ranked.truncate(top_n);
    ranked
}

/// Pocket ranking from unit profiles; units without classified exposed
/// margins are left out.
pub fn pockets_from_profiles<'a>(
    units: impl IntoIterator<Item = (&'a String, &'a ExposureProfile)>,
    margin: ExposedMargin,
    top_n: usize,
) -> Vec<Pocket> {
    margin_pockets(
        units.into_iter().filter_map(|(u, p)| {
            p.within_margin_shares().map(|w| (u.clone(), p.exposed, w[margin.index()]))
        }),
        top_n,
    )
}

/// CSV with an id column and a text column.
pub fn load_texts<R: Read>(reader: R, id_column: &str, text_column: &str) -> Result<Vec<(String, String)>, LinkageError> {
    let t = Table::read(reader)?;
    let (id, text) = (t.column(id_column)?, t.column(text_column)?);
    Ok(t.rows.iter().map(|(_, r)| (r[id].to_string(), r[text].to_string())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(level: f64) -> ExposureProfile {
        ExposureProfile { mean_level: level, ..Default::default() }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut m = BTreeMap::new();
        m.insert("11-1011".to_string(), vec![("t1".to_string(), 0.5), ("t2".to_string(), 0.4)]);
        assert!(matches!(TaskWeightMap::new(m), Err(LinkageError::Unnormalized { .. })));
        let w = TaskWeightMap::from_raw(vec![("o".into(), "a".into(), 2.0), ("o".into(), "b".into(), 6.0)]).unwrap();
        assert_eq!(w.occupations()["o"], vec![("a".to_string(), 0.25), ("b".to_string(), 0.75)]);
    }

    #[test]
    fn soc_renormalizes_missing_tasks() {
        let w = TaskWeightMap::from_raw(vec![
            ("o".into(), "a".into(), 0.2),
            ("o".into(), "b".into(), 0.3),
            ("o".into(), "c".into(), 0.5),
        ])
        .unwrap();
        let tasks: BTreeMap<String, ExposureProfile> =
            [("a".to_string(), profile(0.0)), ("c".to_string(), profile(3.0))].into_iter().collect();
        let s = soc_summary_from_profiles(&tasks, &w);
        let v = &s.values["o"];
        assert!((v.profile.mean_level - 0.5 * 3.0 / 0.7).abs() < 1e-12);
        assert!((s.dropped_mass - 0.3).abs() < 1e-12);
    }

    #[test]
    fn isco_normalizes_by_received_mass() {
        let bridge = BridgeShares::from_raw(vec![
            ("o1".into(), "k".into(), 1.0),
            ("o2".into(), "k".into(), 1.0),
        ])
        .unwrap();
        let socs: BTreeMap<String, ExposureProfile> =
            [("o1".to_string(), profile(1.0)), ("o2".to_string(), profile(3.0))].into_iter().collect();
        let k = isco_summary(&socs, &bridge).unwrap();
        assert_eq!(k["k"].profile.mean_level, 2.0);
        assert_eq!(k["k"].mass, 2.0);
        let missing: BTreeMap<String, ExposureProfile> = [("o3".to_string(), profile(1.0))].into_iter().collect();
        assert!(matches!(isco_summary(&missing, &bridge), Err(LinkageError::NoBridgeRow(_))));
    }

    #[test]
    fn modal_bridge_ties_to_smallest_code() {
        let b = BridgeShares::from_raw(vec![
            ("o".into(), "2222".into(), 0.5),
            ("o".into(), "1111".into(), 0.5),
            ("p".into(), "3333".into(), 0.7),
            ("p".into(), "1111".into(), 0.3),
        ])
        .unwrap()
        .modal();
        assert_eq!(b.rows()["o"], vec![("1111".to_string(), 1.0)]);
        assert_eq!(b.rows()["p"], vec![("3333".to_string(), 1.0)]);
        assert_eq!(b.variant, BridgeVariant::Modal);
    }

    #[test]
    fn truncate_merges_codes() {
        let b = BridgeShares::from_raw(vec![
            ("o".into(), "2511".into(), 0.25),
            ("o".into(), "2512".into(), 0.25),
            ("o".into(), "4110".into(), 0.5),
        ])
        .unwrap()
        .truncate(1);
        assert_eq!(b.rows()["o"], vec![("2".to_string(), 0.5), ("4".to_string(), 0.5)]);
    }

    #[test]
    fn votes_and_agreement() {
        assert!(retention_from_votes(&[true, true, false]));
        assert!(!retention_from_votes(&[false, false, false]));
        assert!(!retention_from_votes(&[true, false]));
        assert!((vote_agreement(&[true, true, false]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(vote_agreement(&[false, false, false]), Some(1.0));
    }

    #[test]
    fn isic_divisions() {
        assert_eq!(isic_division("0111").unwrap(), "01");
        assert!(isic_division("011").is_err());
        assert!(isic_division("A011").is_err());
    }

    #[test]
    fn pockets_rank_by_product() {
        let p = margin_pockets(
            vec![("b".into(), 0.5, 0.9), ("a".into(), 0.9, 0.8), ("c".into(), 0.7, 0.0)],
            10,
        );
        let order: Vec<&str> = p.iter().map(|x| x.unit.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert!((p[0].score - 0.72).abs() < 1e-12);
    }
}
