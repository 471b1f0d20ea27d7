//! The full pipeline from one config file.

use anyhow::{Context as _, Result};
use atlas_core::aggregate::CountrySummary;
use atlas_core::ingest::{load_covariates, open};
use atlas_core::{CountryRegistry, CovariateRow};
use serde_json::json;

use crate::config::Run;
use crate::output::{opt, Outputs};
use crate::pipeline;
use crate::stats_cmd::{self, Columns};
use crate::table::DataTable;

const COUNTRY_METRICS: [&str; 7] = [
    "exposed_share",
    "mean_level",
    "high_share",
    "ai_material_share_exposed",
    "margin_within_substitute",
    "margin_within_augment",
    "margin_within_both",
];

fn country_metric(s: &CountrySummary, name: &str) -> Option<f64> {
    let w = s.margin_shares_within;
    match name {
        "exposed_share" => Some(s.exposed_share),
        "mean_level" => Some(s.mean_level),
        "high_share" => Some(s.high_share),
        "ai_material_share_exposed" => s.ai_material_share_exposed,
        "margin_within_substitute" => w.map(|m| m.substitute),
        "margin_within_augment" => w.map(|m| m.augment),
        "margin_within_both" => w.map(|m| m.both),
        _ => None,
    }
}

fn country_table(
    run: &Run,
    summaries: &[CountrySummary],
    registry: Option<&CountryRegistry>,
) -> Result<Option<DataTable>> {
    let Some(path) = run.optional(&run.config.covariates) else { return Ok(None) };
    let [start, end] = run.config.covariate_window;
    let covariates = load_covariates(open(&path)?, start..=end).with_context(|| format!("{}", path.display()))?;
    let mut columns = vec!["iso3".to_string(), "income_group".to_string(), "region".to_string()];
    columns.extend(COUNTRY_METRICS.iter().map(|s| s.to_string()));
    columns.extend(CovariateRow::VARIABLES.iter().map(|s| s.to_string()));
    let rows = summaries
        .iter()
        .filter(|s| atlas_core::types::is_iso3(&s.iso3))
        .map(|s| {
            let ctx = registry.and_then(|r| r.get(&s.iso3));
            let mut row = vec![
                s.iso3.clone(),
                ctx.map(|c| c.income_group.to_string()).unwrap_or_default(),
                ctx.map(|c| c.region.to_string()).unwrap_or_default(),
            ];
            row.extend(COUNTRY_METRICS.iter().map(|m| opt(country_metric(s, m))));
            let cov = covariates.get(&s.iso3);
            row.extend(CovariateRow::VARIABLES.iter().map(|v| opt(cov.and_then(|c| c.get(v)))));
            row
        })
        .collect();
    Ok(Some(DataTable::new(columns, rows)))
}

/// Runs a stats step, recording statistical failures instead of aborting.
fn step(skipped: &mut Vec<serde_json::Value>, name: &str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    match f() {
        Ok(()) => Ok(()),
        Err(e) if e.downcast_ref::<atlas_stats::StatsError>().is_some() => {
            skipped.push(json!({ "step": name, "reason": e.to_string() }));
            Ok(())
        }
        Err(e) => Err(e.context(format!("report step {name}"))),
    }
}

fn cols(x: &[&str], y: &str) -> Columns {
    Columns {
        id: Some("iso3".into()),
        x: x.iter().map(|s| s.to_string()).collect(),
        y: Some(y.into()),
        ..Columns::default()
    }
}

pub fn report(run: &Run) -> Result<()> {
    let mut out = Outputs::new(run)?;
    let mut skipped = Vec::new();
    let c = &run.config;

    let dataset = pipeline::ingest(run, &mut out, false)?;
    let registry = pipeline::registry(run)?;
    let summaries = pipeline::summarize(run, &mut out, &dataset, registry.as_ref())?;

    let graph = if c.tasks.is_some() && c.activities.is_some() && c.votes.is_some() {
        let cands = pipeline::link_candidates(run, &mut out)?;
        Some(pipeline::link_prune(run, &mut out, &cands)?)
    } else {
        pipeline::read_graph(run)?
    };
    if c.task_weights.is_some() && c.bridge.is_some() {
        pipeline::link_apply(run, &mut out, &dataset, graph.as_ref())?;
    }
    let reweighted = if c.task_weights.is_some() && c.bridge.is_some() && c.employment.is_some() {
        Some(pipeline::reweight(run, &mut out, &dataset)?)
    } else {
        None
    };

    if c.comparison_labels.is_some() {
        pipeline::validate_agreement(run, &mut out, &dataset)?;
    }
    if c.paraphrase_variants.len() >= 2 {
        pipeline::validate_paraphrase(run, &mut out, &dataset)?;
    }
    if c.lexicon.is_some() {
        pipeline::validate_screen(run, &mut out, &dataset)?;
    }
    if registry.is_some() {
        pipeline::validate_divergence(run, &mut out, &dataset, registry.as_ref())?;
    }
    pipeline::validate_distribution(run, &mut out, &dataset, registry.as_ref())?;

    let stats = &c.stats;
    if let Some(table) = country_table(run, &summaries, registry.as_ref())? {
        out.csv("country_table.csv", &table.columns, table.rows.clone())?;
        let covs: Vec<&str> = CovariateRow::VARIABLES.to_vec();
        step(&mut skipped, "corr", || {
            stats_cmd::corr(&mut out, "corr_ai_material_gdp", &table, &cols(&["log_gdp_pc"], "ai_material_share_exposed")).map(drop)
        })?;
        step(&mut skipped, "loess", || {
            stats_cmd::loess_band(&mut out, "loess_exposed_gdp", &table, &cols(&["log_gdp_pc"], "exposed_share"), stats, run.seed)
        })?;
        let exposed = cols(&covs, "exposed_share");
        step(&mut skipped, "dominance", || stats_cmd::dominance(&mut out, "dominance_exposed", &table, &exposed))?;
        step(&mut skipped, "shap", || stats_cmd::shap(&mut out, "shap_exposed", &table, &exposed, stats))?;
        step(&mut skipped, "forest", || stats_cmd::forest(&mut out, "forest_exposed", &table, &exposed, stats, run.seed))?;
        step(&mut skipped, "ale", || stats_cmd::ale(&mut out, "ale_exposed", &table, &exposed, stats, run.seed))?;
    }

    if let Some(rw) = &reweighted {
        let rows: Vec<Vec<String>> = rw
            .cells
            .iter()
            .flat_map(|(iso3, units)| units.iter().map(move |(cell, u)| vec![iso3.clone(), cell.clone(), u.profile.exposed.to_string()]))
            .collect();
        let cells = DataTable::new(vec!["iso3".into(), "cell".into(), "exposed".into()], rows);
        let spec = Columns { row: Some("iso3".into()), col: Some("cell".into()), y: Some("exposed".into()), ..Columns::default() };
        step(&mut skipped, "vardecomp", || stats_cmd::vardecomp(&mut out, "vardecomp_cells", &cells, &spec))?;

        let rows: Vec<Vec<String>> = rw
            .panel
            .iter()
            .map(|r| vec![r.iso3.clone(), r.cell.clone(), r.y.to_string(), r.x[0].to_string(), r.x[1].to_string(), r.x[2].to_string()])
            .collect();
        let panel = DataTable::new(
            ["iso3", "cell", "y", "substitute_x10", "augment_x10", "both_x10"].iter().map(|s| s.to_string()).collect(),
            rows,
        );
        let spec = Columns {
            x: vec!["substitute_x10".into(), "augment_x10".into(), "both_x10".into()],
            y: Some("y".into()),
            row: Some("iso3".into()),
            col: Some("cell".into()),
            cluster: Some("iso3".into()),
            ..Columns::default()
        };
        step(&mut skipped, "fe", || stats_cmd::fe(&mut out, "fe_gender", &panel, &spec))?;
    }

    let files = out.written().to_vec();
    out.json("manifest.json", &json!({ "files": files, "skipped": skipped }))?;
    println!("report: {} files in {}", files.len() + 1, out.dir().display());
    Ok(())
}
