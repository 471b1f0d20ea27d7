#![allow(dead_code)]

use atlas_core::schema::validate_record;
use atlas_core::{LabelDataset, TaskLabelRecord};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

pub const CHANNELS: [&str; 6] = [
    "physical_execution",
    "rule_based_workflow",
    "planning_control",
    "inference_scoring",
    "informational_transformation",
    "none",
];
pub const MARGINS: [&str; 4] = ["substitute", "augment", "both", "unclear"];
pub const FUNCTIONS: [&str; 4] = ["state_inference", "content_transformation", "recommendation_decision_support", "adaptive_control"];
const WORDS: [&str; 12] =
    ["routine", "records", "sorting", "software", "judgement", "clients", "machines", "inspection", "forecast", "drafting", "care", "repair"];

/// A schema-valid record with random labels.
pub fn random_record<R: Rng>(rng: &mut R, country: &str, task: &str) -> TaskLabelRecord {
    let exposure = rng.gen_range(0..=3);
    let margin = *MARGINS.choose(rng).unwrap();
    let (mut sub, mut aug) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
    if exposure >= 2 {
        match margin {
            "substitute" => sub = true,
            "augment" => aug = true,
            "both" => (sub, aug) = (true, true),
            _ => {}
        }
    }
    let ai = rng.gen_bool(0.4);
    let function = if ai { *FUNCTIONS.choose(rng).unwrap() } else { "none" };
    let rationale: Vec<&str> = (0..6).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let raw = json!({
        "task_id": task,
        "country": country,
        "exposure_level": exposure,
        "dominant_channel": *CHANNELS.choose(rng).unwrap(),
        "substitution_path": sub,
        "augmentation_path": aug,
        "margin": margin,
        "ai_materiality": ai,
        "dominant_ai_function": function,
        "short_rationale": rationale.join(" "),
        "substitution_summary": "",
        "augmentation_summary": "",
    });
    validate_record(raw.as_object().unwrap()).expect("generator emits valid rows").record
}

pub fn random_dataset<R: Rng>(rng: &mut R, countries: &[&str], n_tasks: usize) -> LabelDataset {
    let mut records = Vec::new();
    for c in countries {
        for t in 0..n_tasks {
            records.push(random_record(rng, c, &format!("T{t:03}")));
        }
    }
    LabelDataset::from_unique(records)
}
