//! Internal-validity checks: run-pair agreement, paraphrase stability,
//! rationale predictability, the rationale/label consistency screen,
//! rationale divergence and label distributions.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Grouping;
use crate::ingest::{CountryRegistry, LabelDataset};
use crate::numeric::{compensated_mean, sha256_hex};
use crate::provider::{cosine, with_retries, CoreLabels, EmbeddingProvider, LabelPredictor, ProviderError};
use crate::types::{is_exposed, Channel, ExposureLevel, IncomeGroup, Margin, RecordKey, TaskLabelRecord};

#[derive(Debug, thiserror::Error)]
pub enum ValidateError {
    #[error("the two runs share no record keys")]
    EmptyIntersection,
    #[error("paraphrase stability needs at least two variants, got {0}")]
    TooFewVariants(usize),
    #[error("lexicon has no phrases for {0}")]
    EmptyLexicon(String),
    #[error("lexicon: {0}")]
    BadLexicon(String),
    #[error("sample is empty")]
    EmptySample,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

/// Empirical category shares.
pub fn marginal<I, S>(values: I) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut n = 0u64;
    for v in values {
        *counts.entry(v.into()).or_default() += 1;
        n += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

/// Expected agreement of two independent draws: Σ_k p_a(k) p_b(k).
pub fn chance_baseline(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    a.iter().filter_map(|(k, pa)| b.get(k).map(|pb| pa * pb)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub exact_level: f64,
    pub within_one_level: f64,
    pub binary_exposed: f64,
    /// Exact agreement per field; `margin` is over pairs exposed on both sides.
    pub per_field: BTreeMap<String, f64>,
    pub margin_pairs: usize,
    /// Rows: first run's level, columns: second run's level.
    pub confusion: [[u64; 4]; 4],
    pub baselines: BTreeMap<String, f64>,
}

fn share(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

/// Agreement metrics over aligned label pairs.
pub fn agreement_from_pairs(pairs: &[(CoreLabels, CoreLabels)]) -> Result<AgreementReport, ValidateError> {
    let n = pairs.len();
    if n == 0 {
        return Err(ValidateError::EmptyIntersection);
    }
    let mut confusion = [[0u64; 4]; 4];
    let (mut exact, mut within, mut binary, mut channel, mut ai) = (0, 0, 0, 0, 0);
    let mut margin_pairs = Vec::new();
    for (a, b) in pairs {
        let (la, lb) = (a.exposure.value() as i32, b.exposure.value() as i32);
        confusion[la as usize][lb as usize] += 1;
        exact += (la == lb) as usize;
        within += ((la - lb).abs() <= 1) as usize;
        binary += (is_exposed(a.exposure) == is_exposed(b.exposure)) as usize;
        channel += (a.channel == b.channel) as usize;
        ai += (a.ai_material == b.ai_material) as usize;
        if is_exposed(a.exposure) && is_exposed(b.exposure) {
            margin_pairs.push((a.margin, b.margin));
        }
    }
    let mut per_field = BTreeMap::new();
    per_field.insert("exposure".to_string(), share(exact, n));
    per_field.insert("exposed".to_string(), share(binary, n));
    per_field.insert("channel".to_string(), share(channel, n));
    per_field.insert("ai_material".to_string(), share(ai, n));
    if !margin_pairs.is_empty() {
        let m = margin_pairs.iter().filter(|(a, b)| a == b).count();
        per_field.insert("margin".to_string(), share(m, margin_pairs.len()));
    }

    let side = |f: fn(&CoreLabels) -> String, first: bool| {
        marginal(pairs.iter().map(|(a, b)| f(if first { a } else { b })))
    };
    let fields: [(&str, fn(&CoreLabels) -> String); 4] = [
        ("exposure", |l| l.exposure.to_string()),
        ("exposed", |l| is_exposed(l.exposure).to_string()),
        ("channel", |l| l.channel.to_string()),
        ("ai_material", |l| l.ai_material.to_string()),
    ];
    let mut baselines = BTreeMap::new();
    for (name, f) in fields {
        baselines.insert(name.to_string(), chance_baseline(&side(f, true), &side(f, false)));
    }
    if !margin_pairs.is_empty() {
        let ma = marginal(margin_pairs.iter().map(|(a, _)| a.as_str()));
        let mb = marginal(margin_pairs.iter().map(|(_, b)| b.as_str()));
        baselines.insert("margin".to_string(), chance_baseline(&ma, &mb));
    }

    Ok(AgreementReport {
        n,
        exact_level: share(exact, n),
        within_one_level: share(within, n),
        binary_exposed: share(binary, n),
        per_field,
        margin_pairs: margin_pairs.len(),
        confusion,
        baselines,
    })
}

/// Records with the same task in both runs. Keys match on (context, task);
/// when the runs use different context tags, tasks are matched by id within
/// the single context of each run.
fn aligned(a: &LabelDataset, b: &LabelDataset) -> Vec<(CoreLabels, CoreLabels)> {
    let direct: Vec<_> = a
        .records()
        .filter_map(|ra| b.get(&ra.country, &ra.task_id).map(|rb| (CoreLabels::from(ra), CoreLabels::from(rb))))
        .collect();
    if !direct.is_empty() {
        return direct;
    }
    let (ca, cb) = (a.countries(), b.countries());
    if ca.len() == 1 && cb.len() == 1 {
        return a
            .records()
            .filter_map(|ra| b.get(&cb[0], &ra.task_id).map(|rb| (CoreLabels::from(ra), CoreLabels::from(rb))))
            .collect();
    }
    Vec::new()
}

pub fn agreement_suite(run_a: &LabelDataset, run_b: &LabelDataset) -> Result<AgreementReport, ValidateError> {
    agreement_from_pairs(&aligned(run_a, run_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseReport {
    pub per_variant: Vec<AgreementReport>,
    /// Within-one-level agreement between every pair of variants.
    pub pairwise_within_one: Vec<Vec<f64>>,
    /// Share of tasks whose level range across all variants is at most one.
    pub joint_within_one: f64,
    pub n_common: usize,
}

pub fn paraphrase_stability(original: &LabelDataset, variants: &[LabelDataset]) -> Result<ParaphraseReport, ValidateError> {
    if variants.len() < 2 {
        return Err(ValidateError::TooFewVariants(variants.len()));
    }
    let per_variant = variants.iter().map(|v| agreement_suite(original, v)).collect::<Result<Vec<_>, _>>()?;
    let k = variants.len();
    let mut pairwise = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let w = agreement_suite(&variants[i], &variants[j])?.within_one_level;
            pairwise[i][j] = w;
            pairwise[j][i] = w;
        }
    }
    let mut common: BTreeSet<&RecordKey> = variants[0].keys().collect();
    for v in &variants[1..] {
        common.retain(|key| v.get_key(key).is_some());
    }
    if common.is_empty() {
        return Err(ValidateError::EmptyIntersection);
    }
    let stable = common
        .iter()
        .filter(|key| {
            let levels: Vec<u8> = variants.iter().map(|v| v.get_key(key).expect("common key").exposure.value()).collect();
            levels.iter().max().unwrap() - levels.iter().min().unwrap() <= 1
        })
        .count();
    Ok(ParaphraseReport {
        per_variant,
        pairwise_within_one: pairwise,
        joint_within_one: share(stable, common.len()),
        n_common: common.len(),
    })
}

// ---------------------------------------------------------------------------
// Seeded selection
// ---------------------------------------------------------------------------

/// Counter-style draw key: a pure function of (seed, stream, record key), so
/// selections do not depend on traversal order or thread schedule.
pub fn draw_key(seed: u64, stream: &str, key: &RecordKey) -> [u8; 32] {
    let digest = sha256_hex(format!("{seed}\u{1f}{stream}\u{1f}{}\u{1f}{}", key.country, key.task_id).as_bytes());
    let mut out = [0u8; 32];
    hex::decode_to_slice(digest, &mut out).expect("sha256 hex");
    out
}

/// Equal counts per exposure level (fewer when a level has fewer records),
/// chosen by smallest draw key.
pub fn stratified_sample(dataset: &LabelDataset, per_level: usize, seed: u64) -> Vec<&TaskLabelRecord> {
    let mut out = Vec::new();
    for level in ExposureLevel::ALL {
        let mut pool: Vec<([u8; 32], &TaskLabelRecord)> = dataset
            .records()
            .filter(|r| r.exposure == level)
            .map(|r| (draw_key(seed, &format!("level{}", level.value()), &r.key()), r))
            .collect();
        pool.sort_by(|a, b| a.0.cmp(&b.0));
        out.extend(pool.into_iter().take(per_level).map(|(_, r)| r));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub seed: u64,
    pub per_level: usize,
    pub sample: Vec<RecordKey>,
    pub agreement: AgreementReport,
}

/// Asks `predictor` to recover each sampled label from the task text and the
/// rationale alone, then scores predicted against original.
pub fn rationale_harness(
    dataset: &LabelDataset,
    task_text: &BTreeMap<String, String>,
    predictor: &dyn LabelPredictor,
    per_level: usize,
    seed: u64,
    retries: u32,
) -> Result<HarnessReport, ValidateError> {
    let sample = stratified_sample(dataset, per_level, seed);
    if sample.is_empty() {
        return Err(ValidateError::EmptySample);
    }
    let pairs = sample
        .par_iter()
        .map(|r| {
            let text = task_text.get(&r.task_id).map(String::as_str).unwrap_or(&r.task_id);
            let predicted = with_retries(retries, || predictor.predict(text, &r.short_rationale))?;
            Ok((predicted, CoreLabels::from(*r)))
        })
        .collect::<Result<Vec<_>, ValidateError>>()?;
    Ok(HarnessReport {
        seed,
        per_level,
        sample: sample.iter().map(|r| r.key()).collect(),
        agreement: agreement_from_pairs(&pairs)?,
    })
}

// ---------------------------------------------------------------------------
// Consistency screen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    #[serde(rename = "r1_level3_denies")]
    R1Level3Denies,
    #[serde(rename = "r2_level0_describes")]
    R2Level0Describes,
    #[serde(rename = "r3_augment_replaces")]
    R3AugmentReplaces,
    #[serde(rename = "r4_substitute_assistive")]
    R4SubstituteAssistive,
    #[serde(rename = "r5_notai_invokes_ai")]
    R5NotaiInvokesAi,
}

impl RuleId {
    pub const ALL: [RuleId; 5] = [
        RuleId::R1Level3Denies,
        RuleId::R2Level0Describes,
        RuleId::R3AugmentReplaces,
        RuleId::R4SubstituteAssistive,
        RuleId::R5NotaiInvokesAi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::R1Level3Denies => "r1_level3_denies",
            RuleId::R2Level0Describes => "r2_level0_describes",
            RuleId::R3AugmentReplaces => "r3_augment_replaces",
            RuleId::R4SubstituteAssistive => "r4_substitute_assistive",
            RuleId::R5NotaiInvokesAi => "r5_notai_invokes_ai",
        }
    }

    /// The label condition a record must meet before its rationale is scanned.
    pub fn eligible(self, r: &TaskLabelRecord) -> bool {
        match self {
            RuleId::R1Level3Denies => r.exposure.value() == 3,
            RuleId::R2Level0Describes => r.exposure.value() == 0,
            RuleId::R3AugmentReplaces => r.margin == Margin::Augment,
            RuleId::R4SubstituteAssistive => r.margin == Margin::Substitute,
            RuleId::R5NotaiInvokesAi => !r.ai_material,
        }
    }
}

pub const DEFAULT_NEGATORS: [&str; 8] = ["not", "no", "cannot", "lacks", "without", "rather than", "wrong to say", "never"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub rules: BTreeMap<RuleId, Vec<String>>,
    #[serde(default = "default_negators")]
    pub negators: Vec<String>,
}

fn default_negators() -> Vec<String> {
    DEFAULT_NEGATORS.iter().map(|s| s.to_string()).collect()
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, ValidateError> {
        serde_json::from_str(text).map_err(|e| ValidateError::BadLexicon(e.to_string()))
    }

    /// Digest of the canonical serialization.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("lexicon serializes").as_bytes())
    }

    fn check(&self) -> Result<(), ValidateError> {
        for rule in RuleId::ALL {
            if self.rules.get(&rule).is_none_or(|p| p.iter().all(|s| s.trim().is_empty())) {
                return Err(ValidateError::EmptyLexicon(rule.as_str().to_string()));
            }
        }
        Ok(())
    }
}

/// Splits on `.`, `!`, `?` or `;` followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?' | ';') {
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Byte spans of case-insensitive, word-bounded occurrences of `phrase`.
/// Both inputs must already be lowercase.
fn find_phrase(haystack: &str, phrase: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if phrase.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(phrase) {
        let s = from + pos;
        let e = s + phrase.len();
        let before_ok = haystack[..s].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            out.push((s, e));
        }
        from = s + haystack[s..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFlag {
    pub key: RecordKey,
    pub rule_id: RuleId,
    pub sentence: String,
    pub phrase: String,
}

/// First (sentence, phrase) of `text` that matches a phrase with no negator
/// outside the matched span in the same sentence.
pub fn match_rule<'a>(text: &'a str, phrases: &'a [String], negators: &[String]) -> Option<(&'a str, &'a str)> {
    for sentence in split_sentences(text) {
        let lower = sentence.to_lowercase();
        let negations: Vec<(usize, usize)> =
            negators.iter().flat_map(|n| find_phrase(&lower, &n.trim().to_lowercase())).collect();
        for phrase in phrases {
            let p = phrase.trim().to_lowercase();
            for (s, e) in find_phrase(&lower, &p) {
                let negated = negations.iter().any(|&(ns, ne)| ne <= s || ns >= e);
                if !negated {
                    return Some((sentence, phrase.as_str()));
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCount {
    pub rule_id: RuleId,
    pub eligible: usize,
    pub flagged: usize,
    pub share_of_eligible: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub n_records: usize,
    pub flags: Vec<ConsistencyFlag>,
    pub rules: Vec<RuleCount>,
    /// Records flagged under at least one rule.
    pub union_flagged: usize,
    pub union_share: f64,
    pub lexicon_digest: String,
}

pub fn consistency_screen(dataset: &LabelDataset, lexicon: &Lexicon) -> Result<ScreenReport, ValidateError> {
    lexicon.check()?;
    let records: Vec<&TaskLabelRecord> = dataset.records().collect();
    let per_record: Vec<(Vec<RuleId>, Vec<ConsistencyFlag>)> = records
        .par_iter()
        .map(|r| {
            let mut eligible = Vec::new();
            let mut flags = Vec::new();
            for rule in RuleId::ALL {
                if !rule.eligible(r) {
                    continue;
                }
                eligible.push(rule);
                if let Some((sentence, phrase)) = match_rule(&r.short_rationale, &lexicon.rules[&rule], &lexicon.negators) {
                    flags.push(ConsistencyFlag {
                        key: r.key(),
                        rule_id: rule,
                        sentence: sentence.to_string(),
                        phrase: phrase.to_string(),
                    });
                }
            }
            (eligible, flags)
        })
        .collect();

    let mut rules: BTreeMap<RuleId, (usize, usize)> = RuleId::ALL.iter().map(|r| (*r, (0, 0))).collect();
    let mut flags = Vec::new();
    let mut union_flagged = 0;
    for (eligible, fs) in per_record {
        for r in eligible {
            rules.get_mut(&r).unwrap().0 += 1;
        }
        union_flagged += (!fs.is_empty()) as usize;
        for f in fs {
            rules.get_mut(&f.rule_id).unwrap().1 += 1;
            flags.push(f);
        }
    }
    let n = records.len();
    Ok(ScreenReport {
        n_records: n,
        flags,
        rules: rules
            .into_iter()
            .map(|(rule_id, (eligible, flagged))| RuleCount {
                rule_id,
                eligible,
                flagged,
                share_of_eligible: (eligible > 0).then(|| share(flagged, eligible)),
            })
            .collect(),
        union_flagged,
        union_share: if n == 0 { 0.0 } else { share(union_flagged, n) },
        lexicon_digest: lexicon.digest(),
    })
}

// ---------------------------------------------------------------------------
// Rationale divergence
// ---------------------------------------------------------------------------

pub const SHIPPED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Stopwords {
    words: BTreeSet<String>,
    pub digest: String,
}

impl Stopwords {
    /// One word per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Stopwords { words, digest: sha256_hex(text.as_bytes()) }
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_STOPWORDS)
    }

    pub fn contains(&self, w: &str) -> bool {
        self.words.contains(w)
    }
}

/// Lowercased alphabetic tokens of length ≥ 2, stopwords removed.
pub fn content_tokens(text: &str, stopwords: &Stopwords) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Option<f64> {
    let union = a.union(b).count();
    (union > 0).then(|| share(a.intersection(b).count(), union))
}

pub fn mentions(text: &str, name: &str) -> bool {
    let n = name.trim().to_lowercase();
    !n.is_empty() && !find_phrase(&text.to_lowercase(), &n).is_empty()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePair {
    pub id: String,
    pub text_a: String,
    pub text_b: String,
    pub country_a: Option<String>,
    pub country_b: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub jaccard: f64,
    pub cosine: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { jaccard: 0.40, cosine: 0.55 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDivergence {
    pub id: String,
    pub jaccard: f64,
    pub cosine: Option<f64>,
    pub mentions_a: bool,
    pub mentions_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrants {
    pub low_jaccard_low_cosine: f64,
    pub low_jaccard_high_cosine: f64,
    pub high_jaccard_low_cosine: f64,
    pub high_jaccard_high_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub pairs: Vec<PairDivergence>,
    /// Pairs with no content tokens on either side.
    pub skipped: usize,
    pub mean_jaccard: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub mention_share_a: Option<f64>,
    pub mention_share_b: Option<f64>,
    pub quadrants: Option<Quadrants>,
    pub thresholds: Thresholds,
    pub stopword_digest: String,
}

/// "High" means at or above the threshold.
pub fn rationale_divergence(
    pairs: &[DivergencePair],
    stopwords: &Stopwords,
    embedder: Option<&dyn EmbeddingProvider>,
    thresholds: Thresholds,
) -> Result<DivergenceReport, ValidateError> {
    let scored: Vec<Option<PairDivergence>> = pairs
        .par_iter()
        .map(|p| {
            let (ta, tb) = (content_tokens(&p.text_a, stopwords), content_tokens(&p.text_b, stopwords));
            if ta.is_empty() || tb.is_empty() {
                return Ok(None);
            }
            let cosine = match embedder {
                Some(e) => cosine(&with_retries(3, || e.embed(&p.text_a))?, &with_retries(3, || e.embed(&p.text_b))?),
                None => None,
            };
            Ok(Some(PairDivergence {
                id: p.id.clone(),
                jaccard: jaccard(&ta, &tb).expect("non-empty token sets"),
                cosine,
                mentions_a: p.country_a.as_deref().is_some_and(|c| mentions(&p.text_a, c)),
                mentions_b: p.country_b.as_deref().is_some_and(|c| mentions(&p.text_b, c)),
            }))
        })
        .collect::<Result<_, ValidateError>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let kept: Vec<PairDivergence> = scored.into_iter().flatten().collect();

    let with_cos: Vec<(f64, f64)> = kept.iter().filter_map(|p| p.cosine.map(|c| (p.jaccard, c))).collect();
    let quadrants = (!with_cos.is_empty()).then(|| {
        let n = with_cos.len();
        let count = |hj: bool, hc: bool| {
            share(with_cos.iter().filter(|(j, c)| (*j >= thresholds.jaccard) == hj && (*c >= thresholds.cosine) == hc).count(), n)
        };
        Quadrants {
            low_jaccard_low_cosine: count(false, false),
            low_jaccard_high_cosine: count(false, true),
            high_jaccard_low_cosine: count(true, false),
            high_jaccard_high_cosine: count(true, true),
        }
    });
    let with_a = pairs.iter().any(|p| p.country_a.is_some());
    let with_b = pairs.iter().any(|p| p.country_b.is_some());
    Ok(DivergenceReport {
        mean_jaccard: compensated_mean(kept.iter().map(|p| p.jaccard)),
        mean_cosine: compensated_mean(with_cos.iter().map(|(_, c)| *c)),
        mention_share_a: if with_a { compensated_mean(kept.iter().map(|p| p.mentions_a as u8 as f64)) } else { None },
        mention_share_b: if with_b { compensated_mean(kept.iter().map(|p| p.mentions_b as u8 as f64)) } else { None },
        pairs: kept,
        skipped,
        quadrants,
        thresholds,
        stopword_digest: stopwords.digest.clone(),
    })
}

/// One rationale from each of two income groups per task, drawn by seeded
/// draw key. Tasks missing from either group are left out.
pub fn draw_divergence_pairs(
    dataset: &LabelDataset,
    registry: &CountryRegistry,
    group_a: IncomeGroup,
    group_b: IncomeGroup,
    seed: u64,
) -> Vec<DivergencePair> {
    let mut best: BTreeMap<(&str, bool), ([u8; 32], &TaskLabelRecord)> = BTreeMap::new();
    for r in dataset.records() {
        let Some(ctx) = registry.get(&r.country) else { continue };
        let side = if ctx.income_group == group_a {
            true
        } else if ctx.income_group == group_b {
            false
        } else {
            continue;
        };
        let k = draw_key(seed, if side { "a" } else { "b" }, &r.key());
        let slot = best.entry((r.task_id.as_str(), side)).or_insert((k, r));
        if k < slot.0 {
            *slot = (k, r);
        }
    }
    let name = |iso3: &str| registry.get(iso3).map(|c| c.name.clone());
    let tasks: BTreeSet<&str> = best.keys().map(|(t, _)| *t).collect();
    tasks
        .into_iter()
        .filter_map(|t| {
            let a = best.get(&(t, true))?.1;
            let b = best.get(&(t, false))?.1;
            Some(DivergencePair {
                id: t.to_string(),
                text_a: a.short_rationale.clone(),
                text_b: b.short_rationale.clone(),
                country_a: name(&a.country),
                country_b: name(&b.country),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub group: String,
    pub n: usize,
    pub exposure: BTreeMap<String, f64>,
    pub channel: BTreeMap<String, f64>,
    pub margin: BTreeMap<String, f64>,
    pub ai_material: BTreeMap<String, f64>,
}

fn full_marginal(values: Vec<String>, categories: impl IntoIterator<Item = String>) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = categories.into_iter().map(|c| (c, 0.0)).collect();
    out.extend(marginal(values));
    out
}

fn distribution_of(group: String, records: &[&TaskLabelRecord]) -> DistributionTable {
    DistributionTable {
        group,
        n: records.len(),
        exposure: full_marginal(
            records.iter().map(|r| r.exposure.to_string()).collect(),
            ExposureLevel::ALL.iter().map(|l| l.to_string()),
        ),
        channel: full_marginal(
            records.iter().map(|r| r.channel.to_string()).collect(),
            Channel::ALL.iter().map(|c| c.to_string()),
        ),
        margin: full_marginal(
            records.iter().map(|r| r.margin.to_string()).collect(),
            Margin::ALL.iter().map(|m| m.to_string()),
        ),
        ai_material: full_marginal(
            records.iter().map(|r| r.ai_material.to_string()).collect(),
            ["false".to_string(), "true".to_string()],
        ),
    }
}

/// Marginal shares per field, for the whole dataset (group `all`) and, when
/// a grouping is given, for each registry group.
pub fn distribution_check(dataset: &LabelDataset, grouping: Option<(&CountryRegistry, Grouping)>) -> Vec<DistributionTable> {
    let all: Vec<&TaskLabelRecord> = dataset.records().collect();
    let mut out = Vec::new();
    if !all.is_empty() {
        out.push(distribution_of("all".to_string(), &all));
    }
    if let Some((registry, grouping)) = grouping {
        let mut groups: BTreeMap<String, Vec<&TaskLabelRecord>> = BTreeMap::new();
        for r in &all {
            if let Some(ctx) = registry.get(&r.country) {
                groups.entry(grouping.key(ctx)).or_default().push(r);
            }
        }
        out.extend(groups.into_iter().map(|(g, rs)| distribution_of(g, &rs)));
    }
    out
}
