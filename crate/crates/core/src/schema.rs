//! Record-level validation and normalization of classifier outputs.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::types::{
    AiFunction, BenchmarkContext, Channel, ExposureLevel, Margin, TaskLabelRecord, MAX_RATIONALE_CHARS,
};

/// Raw field map as produced by the JSONL and CSV readers.
pub type RawRow = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    MissingField,
    InvalidType,
    InvalidEnum,
    ExposureOutOfRange,
    InvalidCountry,
    RationaleTooLong,
    MarginPathContradiction,
    AiFunctionWithoutMateriality,
    RawMarginOnExposed,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::MissingField => "missing-field",
            ViolationCode::InvalidType => "invalid-type",
            ViolationCode::InvalidEnum => "invalid-enum",
            ViolationCode::ExposureOutOfRange => "exposure-out-of-range",
            ViolationCode::InvalidCountry => "invalid-country",
            ViolationCode::RationaleTooLong => "rationale-too-long",
            ViolationCode::MarginPathContradiction => "margin-path-contradiction",
            ViolationCode::AiFunctionWithoutMateriality => "ai-function-without-materiality",
            ViolationCode::RawMarginOnExposed => "raw-margin-on-exposed",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: Option<String>,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, field: &str, message: impl Into<String>) -> Self {
        Violation { code, field: Some(field.to_string()), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{} [{}]: {}", self.code, field, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

/// A change applied to a record during normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationNote {
    /// Margin on a non-exposed record replaced by `unclear`; the raw value is kept.
    MarginClearedBelowThreshold { raw: Margin },
    /// Missing task id replaced by a hash of the normalized task statement.
    TaskIdFromStatement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validated {
    pub record: TaskLabelRecord,
    pub notes: Vec<NormalizationNote>,
}

/// Stable id for a task statement: lowercase, whitespace-collapsed text hashed with SHA-256.
pub fn task_id_from_statement(statement: &str) -> String {
    let normalized = statement.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let digest = Sha256::digest(normalized.as_bytes());
    format!("sha256:{}", &hex::encode(digest)[..16])
}

fn lookup<'a>(raw: &'a RawRow, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| raw.get(*n))
}

struct Collector<'a> {
    raw: &'a RawRow,
    violations: Vec<Violation>,
}

impl<'a> Collector<'a> {
    fn required(&mut self, names: &[&str]) -> Option<&'a Value> {
        match lookup(self.raw, names) {
            Some(v) if !v.is_null() => Some(v),
            _ => {
                self.violations.push(Violation::new(ViolationCode::MissingField, names[0], "required field absent"));
                None
            }
        }
    }

    fn boolean(&mut self, names: &[&str]) -> Option<bool> {
        let v = self.required(names)?;
        let parsed = match v {
            Value::Bool(b) => Some(*b),
            Value::String(s) if s == "true" => Some(true),
            Value::String(s) if s == "false" => Some(false),
            _ => None,
        };
        if parsed.is_none() {
            self.violations.push(Violation::new(ViolationCode::InvalidType, names[0], format!("expected boolean, got {v}")));
        }
        parsed
    }

    fn string(&mut self, names: &[&str]) -> Option<String> {
        match self.required(names)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.violations.push(Violation::new(ViolationCode::InvalidType, names[0], format!("expected string, got {other}")));
                None
            }
        }
    }

    fn enumeration<T: std::str::FromStr>(&mut self, names: &[&str]) -> Option<T> {
        let s = self.string(names)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.violations.push(Violation::new(ViolationCode::InvalidEnum, names[0], format!("value {s:?} not allowed")));
                None
            }
        }
    }

    fn rationale(&mut self, name: &str) -> Option<String> {
        let s = self.string(&[name])?;
        let len = s.chars().count();
        if len > MAX_RATIONALE_CHARS {
            self.violations.push(Violation::new(
                ViolationCode::RationaleTooLong,
                name,
                format!("{len} characters exceeds {MAX_RATIONALE_CHARS}"),
            ));
        }
        Some(s)
    }
}

/// Validates one raw classifier row and returns a normalized record, or every
/// violated rule.
///
/// Non-exposed records keep their returned margin in `raw_margin` and carry
/// `unclear` as the effective margin. Margin/path consistency is checked on
/// the effective margin.
pub fn validate_record(raw: &RawRow) -> Result<Validated, Vec<Violation>> {
    let mut c = Collector { raw, violations: Vec::new() };
    let mut notes = Vec::new();

    let task_id = match lookup(raw, &["task_id"]) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(Value::String(_)) | Some(Value::Null) | None => match lookup(raw, &["task_statement"]) {
            Some(Value::String(s)) if !s.trim().is_empty() => {
                notes.push(NormalizationNote::TaskIdFromStatement);
                Some(task_id_from_statement(s))
            }
            _ => {
                c.violations.push(Violation::new(
                    ViolationCode::MissingField,
                    "task_id",
                    "neither task_id nor task_statement present",
                ));
                None
            }
        },
        Some(other) => {
            c.violations.push(Violation::new(ViolationCode::InvalidType, "task_id", format!("expected string, got {other}")));
            None
        }
    };

    let country = c.string(&["country"]);
    if let Some(ctry) = &country {
        if BenchmarkContext::parse(ctry).is_none() {
            c.violations.push(Violation::new(
                ViolationCode::InvalidCountry,
                "country",
                format!("{ctry:?} is neither an ISO3 code nor a benchmark context tag"),
            ));
        }
    }

    let exposure = c.required(&["exposure_level", "exposure"]).and_then(|v| {
        let int = match v {
            Value::Number(n) => n.as_i64(),
            Value::String(s) => s.trim().parse::<i64>().ok(),
            _ => None,
        };
        match int {
            Some(i) => match ExposureLevel::new(i) {
                Some(level) => Some(level),
                None => {
                    c.violations.push(Violation::new(
                        ViolationCode::ExposureOutOfRange,
                        "exposure_level",
                        format!("{i} outside 0..=3"),
                    ));
                    None
                }
            },
            None => {
                c.violations.push(Violation::new(ViolationCode::InvalidType, "exposure_level", format!("expected integer, got {v}")));
                None
            }
        }
    });

    let channel: Option<Channel> = c.enumeration(&["dominant_channel", "channel"]);
    let substitution_path = c.boolean(&["substitution_path"]);
    let augmentation_path = c.boolean(&["augmentation_path"]);
    let margin: Option<Margin> = c.enumeration(&["margin"]);
    let raw_margin: Option<Margin> = match lookup(raw, &["raw_margin"]) {
        None | Some(Value::Null) => None,
        Some(_) => c.enumeration(&["raw_margin"]),
    };
    let ai_material = c.boolean(&["ai_materiality", "ai_material"]);
    let ai_function: Option<AiFunction> = c.enumeration(&["dominant_ai_function", "ai_function"]);
    let short_rationale = c.rationale("short_rationale");
    let substitution_summary = c.rationale("substitution_summary");
    let augmentation_summary = c.rationale("augmentation_summary");

    let mut violations = c.violations;

    let (
        Some(task_id),
        Some(country),
        Some(exposure),
        Some(channel),
        Some(substitution_path),
        Some(augmentation_path),
        Some(mut margin),
        Some(ai_material),
        Some(ai_function),
        Some(short_rationale),
        Some(substitution_summary),
        Some(augmentation_summary),
    ) = (
        task_id,
        country,
        exposure,
        channel,
        substitution_path,
        augmentation_path,
        margin,
        ai_material,
        ai_function,
        short_rationale,
        substitution_summary,
        augmentation_summary,
    )
    else {
        return Err(violations);
    };

    let mut raw_margin = raw_margin;
    if exposure.value() < 2 {
        if margin != Margin::Unclear {
            notes.push(NormalizationNote::MarginClearedBelowThreshold { raw: margin });
            raw_margin = Some(margin);
            margin = Margin::Unclear;
        }
    } else if raw_margin.is_some() {
        violations.push(Violation::new(
            ViolationCode::RawMarginOnExposed,
            "raw_margin",
            "raw_margin is only meaningful on records below the exposure threshold",
        ));
    }

    let path_ok = match margin {
        Margin::Substitute => substitution_path,
        Margin::Augment => augmentation_path,
        Margin::Both => substitution_path && augmentation_path,
        Margin::Unclear => true,
    };
    if !path_ok {
        violations.push(Violation::new(
            ViolationCode::MarginPathContradiction,
            "margin",
            format!(
                "margin {margin} with substitution_path={substitution_path}, augmentation_path={augmentation_path}"
            ),
        ));
    }
    if !ai_material && ai_function != AiFunction::None {
        violations.push(Violation::new(
            ViolationCode::AiFunctionWithoutMateriality,
            "dominant_ai_function",
            format!("{ai_function} recorded while ai_materiality is false"),
        ));
    }

    if !violations.is_empty() {
        return Err(violations);
    }

    Ok(Validated {
        record: TaskLabelRecord {
            task_id,
            country,
            exposure,
            channel,
            substitution_path,
            augmentation_path,
            margin,
            raw_margin,
            ai_material,
            ai_function,
            short_rationale,
            substitution_summary,
            augmentation_summary,
        },
        notes,
    })
}

/// Serializes a record back into the raw field map accepted by [`validate_record`].
pub fn to_raw(record: &TaskLabelRecord) -> RawRow {
    match serde_json::to_value(record).expect("record serializes") {
        Value::Object(map) => map,
        _ => unreachable!("records serialize to objects"),
    }
}
