//! Data commands: ingest, summarize, link, reweight and validate.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context as _, Result};
use atlas_core::aggregate::{
    benchmark_deviations, group_summary, polarisation, summarize_all, summary_header, summary_row, CountrySummary,
};
use atlas_core::ingest::{load_country_registry, load_employment, load_labels, open, LabelFormat};
use atlas_core::linkage::{
    build_candidates, industry_summary, isco_summary, linkage_weight_vector, load_bridge, load_task_weights,
    load_texts, profiles_of, prune_edges, soc_summary, BridgeShares, Candidate, IndustryGraph, SocSummary,
    TaskWeightMap, UnitValue,
};
use atlas_core::profile::ExposureProfile;
use atlas_core::provider::{EmbeddingProvider, HashEmbedder, ReplayEmbedder, ReplayStore, ReplayVoter};
use atlas_core::reweight::{gender_fe_panel, gender_gap, reweighting_adjustment, MarginValues, PanelRow, Sex, WeightVector};
use atlas_core::validate::{
    agreement_suite, consistency_screen, distribution_check, draw_divergence_pairs, paraphrase_stability,
    rationale_divergence, Lexicon, Stopwords,
};
use atlas_core::{is_exposed, CountryRegistry, ExposedMargin, IncomeGroup, LabelDataset};
use serde_json::json;

use crate::config::Run;
use crate::output::{num, opt, Outputs};
use crate::Invariant;

const RETRIES: u32 = 3;
const IDENTITY_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

pub fn load_dataset(run: &Run, path: &Path) -> Result<(LabelDataset, atlas_core::ParseReport)> {
    let format = match &run.config.labels_format {
        Some(f) => Some(f.parse::<LabelFormat>().map_err(|e| anyhow!("labels_format: {e}"))?),
        None => None,
    };
    Ok(load_labels(path, format)?)
}

pub fn labels(run: &Run) -> Result<LabelDataset> {
    let path = run.require(&run.config.labels, "labels")?;
    let (dataset, report) = load_dataset(run, &path)?;
    if report.rows_rejected > 0 {
        eprintln!("warning: {} rows rejected in {}", report.rows_rejected, path.display());
    }
    Ok(dataset)
}

pub fn registry(run: &Run) -> Result<Option<CountryRegistry>> {
    match run.optional(&run.config.registry) {
        Some(p) => Ok(Some(load_country_registry(open(&p)?).with_context(|| format!("{}", p.display()))?)),
        None => Ok(None),
    }
}

fn weights(run: &Run) -> Result<TaskWeightMap> {
    let p = run.require(&run.config.task_weights, "task_weights")?;
    load_task_weights(open(&p)?).with_context(|| format!("{}", p.display()))
}

fn bridge(run: &Run) -> Result<BridgeShares> {
    let p = run.require(&run.config.bridge, "bridge")?;
    let b = load_bridge(open(&p)?).with_context(|| format!("{}", p.display()))?;
    match run.config.bridge_variant.as_str() {
        "weighted" => Ok(b),
        "modal" => Ok(b.modal()),
        other => bail!("bridge_variant must be weighted or modal, got {other:?}"),
    }
}

fn embedder(run: &Run) -> Result<(Box<dyn EmbeddingProvider>, &'static str)> {
    match run.optional(&run.config.embeddings) {
        Some(p) => {
            let store = ReplayStore::load(open(&p)?).with_context(|| format!("{}", p.display()))?;
            Ok((Box::new(ReplayEmbedder(store)), "replay"))
        }
        None => Ok((Box::new(HashEmbedder::default()), "hash")),
    }
}

fn texts(run: &Run) -> Result<(Vec<(String, String)>, Vec<(String, String)>)> {
    let t = run.require(&run.config.tasks, "tasks")?;
    let a = run.require(&run.config.activities, "activities")?;
    let tasks = load_texts(open(&t)?, "task_id", "text").with_context(|| format!("{}", t.display()))?;
    let acts = load_texts(open(&a)?, "isic4", "text").with_context(|| format!("{}", a.display()))?;
    Ok((tasks, acts))
}

/// ISO3 countries in the dataset, excluding benchmark contexts.
fn countries(dataset: &LabelDataset) -> Vec<String> {
    dataset.countries().into_iter().filter(|c| atlas_core::types::is_iso3(c)).collect()
}

fn profile_header(lead: &[&str]) -> Vec<String> {
    lead.iter().map(|s| s.to_string()).chain(ExposureProfile::FIELDS.iter().map(|s| s.to_string())).collect()
}

fn profile_row(lead: Vec<String>, p: &ExposureProfile) -> Vec<String> {
    lead.into_iter().chain(p.to_array().iter().map(|v| num(*v))).collect()
}

// ---------------------------------------------------------------------------
// ingest / summarize
// ---------------------------------------------------------------------------

pub fn ingest(run: &Run, out: &mut Outputs, strict: bool) -> Result<LabelDataset> {
    let path = run.require(&run.config.labels, "labels")?;
    let (dataset, report) = load_dataset(run, &path)?;
    out.text("labels.jsonl", |b| Ok(dataset.write_jsonl(b)?))?;
    out.json(
        "parse_report.json",
        &json!({ "report": report, "dedup": dataset.dedup, "provenance": dataset.provenance }),
    )?;
    println!(
        "ingest: read {} accepted {} rejected {} unique {}",
        report.rows_read,
        report.rows_accepted,
        report.rows_rejected,
        dataset.len()
    );
    if strict && report.rows_rejected > 0 {
        let first = &report.violations[0];
        bail!("{} rows rejected (first: line {} {}: {})", report.rows_rejected, first.line, first.code, first.message);
    }
    Ok(dataset)
}

/// Share identities every summary must satisfy.
pub fn check_summary(s: &CountrySummary) -> Result<(), Invariant> {
    let fail = |what: &str| Err(Invariant(format!("{}: {what}", s.iso3)));
    if let Some(w) = s.margin_shares_within {
        let total: f64 = w.to_array().iter().sum();
        if (total - 1.0).abs() > IDENTITY_TOL {
            return fail("within-exposed margin shares do not sum to one");
        }
        let scale = s.n_margin_classified() as f64 / s.n_tasks as f64;
        for m in ExposedMargin::ALL3 {
            if (s.margin_shares_all.get(m) - scale * w.get(m)).abs() > IDENTITY_TOL {
                return fail("margin shares break the denominator identity");
            }
        }
        let pol = polarisation(s).map_err(|e| Invariant(e.to_string()))?;
        if (pol.p + w.both - 1.0).abs() > 1e-12 {
            return fail("polarisation and the both share do not sum to one");
        }
    }
    Ok(())
}

pub fn summarize(run: &Run, out: &mut Outputs, dataset: &LabelDataset, registry: Option<&CountryRegistry>) -> Result<Vec<CountrySummary>> {
    let summaries = summarize_all(dataset);
    for s in &summaries {
        check_summary(s)?;
    }
    out.csv("country_summary.csv", &summary_header(), summaries.iter().map(summary_row))?;
    if let Some(reg) = registry {
        let grouping = run.grouping()?;
        let registered: Vec<CountrySummary> = summaries.iter().filter(|s| reg.get(&s.iso3).is_some()).cloned().collect();
        let groups = group_summary(&registered, reg, grouping)?;
        let rows = groups.iter().flat_map(|g| {
            g.metrics.iter().map(move |m| vec![g.group.clone(), g.n_countries.to_string(), m.name.clone(), opt(m.mean), m.n.to_string()])
        });
        out.csv("group_summary.csv", &["group", "n_countries", "metric", "mean", "n"], rows)?;
        let (devs, skipped) = benchmark_deviations(dataset, dataset, reg);
        if !devs.is_empty() {
            out.csv(
                "benchmark_deviation.csv",
                &["iso3", "income_group", "mean_deviation", "n_tasks"],
                devs.iter().map(|d| vec![d.iso3.clone(), d.income_group.to_string(), num(d.mean_deviation), d.n_tasks.to_string()]),
            )?;
        }
        if !skipped.is_empty() {
            eprintln!("benchmark: skipped {} countries", skipped.len());
        }
    }
    println!("summarize: {} contexts", summaries.len());
    Ok(summaries)
}

// ---------------------------------------------------------------------------
// link
// ---------------------------------------------------------------------------

pub fn link_candidates(run: &Run, out: &mut Outputs) -> Result<Vec<Candidate>> {
    let (tasks, acts) = texts(run)?;
    let (provider, kind) = embedder(run)?;
    let cands = build_candidates(&tasks, &acts, provider.as_ref(), run.config.candidates)?;
    out.csv(
        "candidates.csv",
        &["task_id", "isic4", "similarity"],
        cands.iter().map(|c| vec![c.task_id.clone(), c.isic4.clone(), num(c.similarity)]),
    )?;
    println!("link candidates: {} edges from {} activities ({kind} embeddings)", cands.len(), acts.len());
    Ok(cands)
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let t = crate::table::DataTable::read(path)?;
    let (task, isic, sim) = (t.column("task_id")?, t.column("isic4")?, t.column("similarity")?);
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let similarity = r[sim].parse().map_err(|_| anyhow!("{} row {}: bad similarity", path.display(), i + 1))?;
            Ok(Candidate { task_id: r[task].clone(), isic4: r[isic].clone(), similarity })
        })
        .collect()
}

pub fn link_prune(run: &Run, out: &mut Outputs, candidates: &[Candidate]) -> Result<IndustryGraph> {
    let (tasks, acts) = texts(run)?;
    let votes = run.require(&run.config.votes, "votes")?;
    let voter = ReplayVoter(ReplayStore::load(open(&votes)?).with_context(|| format!("{}", votes.display()))?);
    let task_text: BTreeMap<String, String> = tasks.into_iter().collect();
    let act_text: BTreeMap<String, String> = acts.into_iter().collect();
    let (graph, stats) = prune_edges(candidates, &task_text, &act_text, &voter, run.config.votes_per_edge, RETRIES)?;
    out.text("graph.jsonl", |b| Ok(graph.write_jsonl(b)?))?;
    out.json("prune_stats.json", &json!({ "stats": stats, "votes_per_edge": run.config.votes_per_edge, "candidates": run.config.candidates }))?;
    println!("link prune: kept {} of {} candidates", stats.retained, stats.candidates);
    Ok(graph)
}

pub fn read_graph(run: &Run) -> Result<Option<IndustryGraph>> {
    match run.optional(&run.config.graph) {
        Some(p) => Ok(Some(IndustryGraph::read_jsonl(open(&p)?).with_context(|| format!("{}", p.display()))?)),
        None => Ok(None),
    }
}

pub struct Linked {
    pub soc: BTreeMap<String, SocSummary>,
    pub isco: BTreeMap<String, BTreeMap<String, UnitValue>>,
}

pub fn link_apply(run: &Run, out: &mut Outputs, dataset: &LabelDataset, graph: Option<&IndustryGraph>) -> Result<Linked> {
    let w = weights(run)?;
    let b = bridge(run)?;
    let mut linked = Linked { soc: BTreeMap::new(), isco: BTreeMap::new() };
    for iso3 in countries(dataset) {
        let soc = soc_summary(dataset, &iso3, &w);
        let isco = isco_summary(&profiles_of(&soc.values), &b)?;
        linked.soc.insert(iso3.clone(), soc);
        linked.isco.insert(iso3, isco);
    }
    let unit_rows = |m: &BTreeMap<String, BTreeMap<String, UnitValue>>| -> Vec<Vec<String>> {
        m.iter()
            .flat_map(|(iso3, units)| {
                units.iter().map(move |(u, v)| {
                    profile_row(vec![iso3.clone(), u.clone(), num(v.mass), v.n_members.to_string()], &v.profile)
                })
            })
            .collect()
    };
    let header = profile_header(&["iso3", "unit", "mass", "n_members"]);
    let soc_values: BTreeMap<String, BTreeMap<String, UnitValue>> =
        linked.soc.iter().map(|(k, s)| (k.clone(), s.values.clone())).collect();
    out.csv("soc_values.csv", &header, unit_rows(&soc_values))?;
    out.csv("isco_values.csv", &header, unit_rows(&linked.isco))?;
    out.csv(
        "soc_coverage.csv",
        &["iso3", "occupations", "skipped", "dropped_mass"],
        linked.soc.iter().map(|(k, s)| vec![k.clone(), s.values.len().to_string(), s.skipped.len().to_string(), num(s.dropped_mass)]),
    )?;
    if let Some(g) = graph {
        let divisions: BTreeMap<String, BTreeMap<String, UnitValue>> =
            countries(dataset).into_iter().map(|c| { let s = industry_summary(dataset, &c, g); (c, s.divisions) }).collect();
        out.csv("industry_values.csv", &header, unit_rows(&divisions))?;
    }
    println!("link apply: {} countries, {} bridge", linked.soc.len(), run.config.bridge_variant);
    Ok(linked)
}

// ---------------------------------------------------------------------------
// reweight
// ---------------------------------------------------------------------------

pub struct Reweighted {
    /// Cell profiles per country at the employment cell resolution.
    pub cells: BTreeMap<String, BTreeMap<String, UnitValue>>,
    pub panel: Vec<PanelRow>,
}

const REWEIGHT_METRICS: [&str; 5] = ["mean_level", "exposed", "substitute", "augment", "both"];

fn metric(p: &ExposureProfile, name: &str) -> f64 {
    let i = ExposureProfile::FIELDS.iter().position(|f| *f == name).expect("known profile field");
    p.to_array()[i]
}

pub fn reweight(run: &Run, out: &mut Outputs, dataset: &LabelDataset) -> Result<Reweighted> {
    let w = weights(run)?;
    let b = bridge(run)?.truncate(run.config.isco_digits);
    let emp_path = run.require(&run.config.employment, "employment")?;
    let table = load_employment(open(&emp_path)?).with_context(|| format!("{}", emp_path.display()))?;
    let vectors = atlas_core::reweight::coverage_filter(&table, &run.config.coverage.rule());

    let mut cells = BTreeMap::new();
    for iso3 in countries(dataset) {
        let soc = soc_summary(dataset, &iso3, &w);
        cells.insert(iso3, isco_summary(&profiles_of(&soc.values), &b)?);
    }

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for v in vectors.iter().filter(|v| v.sex == Sex::Total) {
        let Some(units) = cells.get(&v.iso3) else {
            skipped.push(json!({ "iso3": v.iso3, "reason": "no labels" }));
            continue;
        };
        let Some(base) = linkage_weight_vector(&v.iso3, v.year, units) else {
            skipped.push(json!({ "iso3": v.iso3, "reason": "no linkage mass" }));
            continue;
        };
        for m in REWEIGHT_METRICS {
            let values: BTreeMap<String, f64> = units.iter().map(|(c, u)| (c.clone(), metric(&u.profile, m))).collect();
            match reweighting_adjustment(&values, &base, v) {
                Ok(a) => rows.push(vec![
                    a.iso3,
                    a.year.to_string(),
                    m.to_string(),
                    num(a.linkage_weighted),
                    num(a.employment_weighted),
                    num(a.adjustment),
                    num(a.coverage),
                ]),
                Err(e) => skipped.push(json!({ "iso3": v.iso3, "metric": m, "reason": e.to_string() })),
            }
        }
    }
    out.csv(
        "reweight.csv",
        &["iso3", "year", "metric", "linkage_weighted", "employment_weighted", "adjustment", "coverage"],
        rows,
    )?;

    let margin_values: BTreeMap<String, BTreeMap<String, MarginValues>> = cells
        .iter()
        .map(|(iso3, units)| (iso3.clone(), units.iter().map(|(c, u)| (c.clone(), u.profile.margin_values())).collect()))
        .collect();
    let female: Vec<WeightVector> = vectors.iter().filter(|v| v.sex == Sex::Female && cells.contains_key(&v.iso3)).cloned().collect();
    let male: Vec<WeightVector> = vectors.iter().filter(|v| v.sex == Sex::Male && cells.contains_key(&v.iso3)).cloned().collect();
    let mut gaps = Vec::new();
    for f in &female {
        let Some(m) = male.iter().find(|m| m.iso3 == f.iso3) else { continue };
        match gender_gap(&margin_values[&f.iso3], f, m) {
            Ok(g) => gaps.push(vec![
                g.iso3.clone(),
                g.year.to_string(),
                num(g.gap(ExposedMargin::Substitute)),
                num(g.gap(ExposedMargin::Augment)),
                num(g.gap(ExposedMargin::Both)),
                num(g.coverage_female),
                num(g.coverage_male),
            ]),
            Err(e) => skipped.push(json!({ "iso3": f.iso3, "metric": "gender_gap", "reason": e.to_string() })),
        }
    }
    out.csv(
        "gender_gap.csv",
        &["iso3", "year", "gap_substitute_pp", "gap_augment_pp", "gap_both_pp", "coverage_female", "coverage_male"],
        gaps,
    )?;
    let panel = gender_fe_panel(&margin_values, &female, &male)?;
    out.csv(
        "gender_panel.csv",
        &["iso3", "cell", "female_minus_male_pp", "substitute_x10", "augment_x10", "both_x10"],
        panel.iter().map(|r| vec![r.iso3.clone(), r.cell.clone(), num(r.y), num(r.x[0]), num(r.x[1]), num(r.x[2])]),
    )?;
    out.json(
        "reweight.json",
        &json!({
            "isco_digits": run.config.isco_digits,
            "coverage": run.config.coverage,
            "weight_vectors": vectors.len(),
            "panel_rows": panel.len(),
            "skipped": skipped,
        }),
    )?;
    println!("reweight: {} weight vectors, {} panel rows", vectors.len(), panel.len());
    Ok(Reweighted { cells, panel })
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn validate_agreement(run: &Run, out: &mut Outputs, dataset: &LabelDataset) -> Result<()> {
    let path = run.require(&run.config.comparison_labels, "comparison_labels")?;
    let (other, _) = load_dataset(run, &path)?;
    let report = agreement_suite(dataset, &other)?;
    out.json("agreement.json", &report)?;
    println!(
        "validate agreement: n {} exact {:.4} within-one {:.4} binary {:.4}",
        report.n, report.exact_level, report.within_one_level, report.binary_exposed
    );
    Ok(())
}

pub fn validate_paraphrase(run: &Run, out: &mut Outputs, dataset: &LabelDataset) -> Result<()> {
    let variants = run
        .config
        .paraphrase_variants
        .iter()
        .map(|p| load_dataset(run, &run.path(p)).map(|(d, _)| d))
        .collect::<Result<Vec<_>>>()?;
    let report = paraphrase_stability(dataset, &variants)?;
    out.json("paraphrase.json", &report)?;
    println!("validate paraphrase: {} variants, joint within-one {:.4}", variants.len(), report.joint_within_one);
    Ok(())
}

pub fn validate_screen(run: &Run, out: &mut Outputs, dataset: &LabelDataset) -> Result<()> {
    let path = run.require(&run.config.lexicon, "lexicon")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("{}", path.display()))?;
    let lexicon = Lexicon::from_json(&text)?;
    let report = consistency_screen(dataset, &lexicon)?;
    out.csv(
        "screen_flags.csv",
        &["country", "task_id", "rule_id", "phrase", "sentence"],
        report.flags.iter().map(|f| {
            vec![f.key.country.clone(), f.key.task_id.clone(), f.rule_id.as_str().to_string(), f.phrase.clone(), f.sentence.clone()]
        }),
    )?;
    out.json(
        "screen.json",
        &json!({
            "n_records": report.n_records,
            "rules": report.rules,
            "union_flagged": report.union_flagged,
            "union_share": report.union_share,
            "lexicon_digest": report.lexicon_digest,
            "negators": lexicon.negators,
        }),
    )?;
    println!("validate screen: {} of {} records flagged", report.union_flagged, report.n_records);
    Ok(())
}

pub fn validate_divergence(run: &Run, out: &mut Outputs, dataset: &LabelDataset, registry: Option<&CountryRegistry>) -> Result<()> {
    let reg = registry.ok_or_else(|| anyhow!("no registry configured; divergence pairs need income groups"))?;
    let [a, b] = &run.config.divergence_groups;
    let ga = IncomeGroup::parse_lenient(a).map_err(|e| anyhow!("divergence_groups: {e}"))?;
    let gb = IncomeGroup::parse_lenient(b).map_err(|e| anyhow!("divergence_groups: {e}"))?;
    let stopwords = match run.optional(&run.config.stopwords) {
        Some(p) => Stopwords::parse(&std::fs::read_to_string(&p).with_context(|| format!("{}", p.display()))?),
        None => Stopwords::shipped(),
    };
    let (provider, kind) = embedder(run)?;
    let pairs = draw_divergence_pairs(dataset, reg, ga, gb, run.seed);
    let report = rationale_divergence(&pairs, &stopwords, Some(provider.as_ref()), run.config.thresholds)?;
    out.json(
        "divergence.json",
        &json!({ "groups": [ga, gb], "embeddings": kind, "report": report }),
    )?;
    println!("validate divergence: {} pairs ({} skipped)", report.pairs.len(), report.skipped);
    Ok(())
}

pub fn validate_distribution(run: &Run, out: &mut Outputs, dataset: &LabelDataset, registry: Option<&CountryRegistry>) -> Result<()> {
    let grouping = match registry {
        Some(r) => Some((r, run.grouping()?)),
        None => None,
    };
    let tables = distribution_check(dataset, grouping);
    let exposed = dataset.records().filter(|r| is_exposed(r.exposure)).count();
    out.json(
        "distribution.json",
        &json!({ "tables": tables, "exposed_records": exposed, "records": dataset.len() }),
    )?;
    let mut stdout = std::io::stdout().lock();
    if let Some(all) = tables.first() {
        writeln!(stdout, "validate distribution: {} records", all.n)?;
        for (level, share) in &all.exposure {
            writeln!(stdout, "  level {level}: {:.4}", share)?;
        }
    }
    Ok(())
}
