//! Domain types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum length of each free-text rationale field, in characters.
pub const MAX_RATIONALE_CHARS: usize = 240;

/// Ordered economic-exposure level on the 0..=3 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExposureLevel(u8);

impl ExposureLevel {
    pub const ALL: [ExposureLevel; 4] = [Self(0), Self(1), Self(2), Self(3)];

    pub fn new(value: i64) -> Option<Self> {
        (0..=3).contains(&value).then_some(Self(value as u8))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
}

impl Serialize for ExposureLevel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for ExposureLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        ExposureLevel::new(v).ok_or_else(|| serde::de::Error::custom(format!("exposure level {v} outside 0..=3")))
    }
}

impl fmt::Display for ExposureLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// True for the economically exposed levels 2 and 3.
pub fn is_exposed(level: ExposureLevel) -> bool {
    level.0 >= 2
}

/// Unknown string for a closed enumeration.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} value {value:?}")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownVariant { kind: $kind, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum! {
    /// Mechanism that automates the economically relevant output of a task.
    Channel, "channel" {
        PhysicalExecution => "physical_execution",
        RuleBasedWorkflow => "rule_based_workflow",
        PlanningControl => "planning_control",
        InferenceScoring => "inference_scoring",
        InformationalTransformation => "informational_transformation",
        None => "none",
    }
}

impl Channel {
    /// The five technology channels, excluding `none`.
    pub const ACTIVE: [Channel; 5] = [
        Channel::PhysicalExecution,
        Channel::RuleBasedWorkflow,
        Channel::PlanningControl,
        Channel::InferenceScoring,
        Channel::InformationalTransformation,
    ];
}

string_enum! {
    /// Predominant labour-reallocation route.
    Margin, "margin" {
        Substitute => "substitute",
        Augment => "augment",
        Both => "both",
        Unclear => "unclear",
    }
}

impl Margin {
    pub fn exposed_margin(self) -> Option<ExposedMargin> {
        match self {
            Margin::Substitute => Some(ExposedMargin::Substitute),
            Margin::Augment => Some(ExposedMargin::Augment),
            Margin::Both => Some(ExposedMargin::Both),
            Margin::Unclear => None,
        }
    }
}

string_enum! {
    /// The three mutually exclusive margins defined on exposed work.
    ExposedMargin, "exposed margin" {
        Substitute => "substitute",
        Augment => "augment",
        Both => "both",
    }
}

impl ExposedMargin {
    pub const ALL3: [ExposedMargin; 3] = [ExposedMargin::Substitute, ExposedMargin::Augment, ExposedMargin::Both];

    pub fn index(self) -> usize {
        match self {
            ExposedMargin::Substitute => 0,
            ExposedMargin::Augment => 1,
            ExposedMargin::Both => 2,
        }
    }
}

string_enum! {
    /// Main role played by learned models on an AI-material route.
    AiFunction, "AI function" {
        None => "none",
        StateInference => "state_inference",
        ContentTransformation => "content_transformation",
        RecommendationDecisionSupport => "recommendation_decision_support",
        AdaptiveControl => "adaptive_control",
    }
}

impl AiFunction {
    pub const ACTIVE: [AiFunction; 4] = [
        AiFunction::StateInference,
        AiFunction::ContentTransformation,
        AiFunction::RecommendationDecisionSupport,
        AiFunction::AdaptiveControl,
    ];
}

string_enum! {
    /// World Bank income classification.
    IncomeGroup, "income group" {
        Low => "low",
        LowerMiddle => "lower_middle",
        UpperMiddle => "upper_middle",
        High => "high",
        Unclassified => "unclassified",
    }
}

impl IncomeGroup {
    /// Parses the canonical snake-case tag or the World Bank display label
    /// ("Lower middle income"). An empty string means unclassified.
    pub fn parse_lenient(s: &str) -> Result<Self, UnknownVariant> {
        let t = s.trim();
        if t.is_empty() {
            return Ok(IncomeGroup::Unclassified);
        }
        if let Ok(g) = t.parse() {
            return Ok(g);
        }
        let norm = t.to_ascii_lowercase().replace(['-', '_'], " ");
        let norm = norm.trim_end_matches(" income").trim();
        match norm {
            "low" => Ok(IncomeGroup::Low),
            "lower middle" => Ok(IncomeGroup::LowerMiddle),
            "upper middle" => Ok(IncomeGroup::UpperMiddle),
            "high" => Ok(IncomeGroup::High),
            _ => Err(UnknownVariant { kind: "income group", value: s.to_string() }),
        }
    }

    pub fn is_classified(self) -> bool {
        self != IncomeGroup::Unclassified
    }
}

string_enum! {
    /// The seven World Bank regions.
    Region, "region" {
        EastAsiaPacific => "east_asia_pacific",
        EuropeCentralAsia => "europe_central_asia",
        LatinAmericaCaribbean => "latin_america_caribbean",
        MiddleEastNorthAfrica => "middle_east_north_africa",
        NorthAmerica => "north_america",
        SouthAsia => "south_asia",
        SubSaharanAfrica => "sub_saharan_africa",
    }
}

impl Region {
    /// Accepts the snake-case tag or the display label ("Latin America & Caribbean").
    pub fn parse_lenient(s: &str) -> Result<Self, UnknownVariant> {
        if let Ok(r) = s.trim().parse() {
            return Ok(r);
        }
        let norm: String = s
            .to_ascii_lowercase()
            .replace('&', " ")
            .replace(" and ", " ")
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        norm.parse().map_err(|_| UnknownVariant { kind: "region", value: s.to_string() })
    }
}

/// One country as described by the registry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryContext {
    pub iso3: String,
    pub name: String,
    pub income_group: IncomeGroup,
    pub region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gdp_per_capita: Option<f64>,
}

/// The context a label was conditioned on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BenchmarkContext {
    ContextFree,
    IncomeGroup(IncomeGroup),
    Country(String),
}

impl BenchmarkContext {
    pub const CONTEXT_FREE_TAG: &'static str = "context_free";
    pub const INCOME_PREFIX: &'static str = "income_group:";

    /// Parses a label `country` field: `context_free`, `income_group:<group>`
    /// or an upper-case ISO3 code.
    pub fn parse(tag: &str) -> Option<Self> {
        if tag == Self::CONTEXT_FREE_TAG {
            return Some(BenchmarkContext::ContextFree);
        }
        if let Some(g) = tag.strip_prefix(Self::INCOME_PREFIX) {
            return match g.parse::<IncomeGroup>() {
                Ok(IncomeGroup::Unclassified) | Err(_) => None,
                Ok(g) => Some(BenchmarkContext::IncomeGroup(g)),
            };
        }
        is_iso3(tag).then(|| BenchmarkContext::Country(tag.to_string()))
    }

    pub fn tag(&self) -> String {
        match self {
            BenchmarkContext::ContextFree => Self::CONTEXT_FREE_TAG.to_string(),
            BenchmarkContext::IncomeGroup(g) => format!("{}{}", Self::INCOME_PREFIX, g),
            BenchmarkContext::Country(iso3) => iso3.clone(),
        }
    }
}

pub fn is_iso3(s: &str) -> bool {
    s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase())
}

/// One (context, task) classification across the five label dimensions.
///
/// Field names on the wire follow the classifier schema. `raw_margin` keeps
/// the returned margin when normalization replaced it with `unclear`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabelRecord {
    pub task_id: String,
    pub country: String,
    #[serde(rename = "exposure_level", alias = "exposure")]
    pub exposure: ExposureLevel,
    #[serde(rename = "dominant_channel", alias = "channel")]
    pub channel: Channel,
    pub substitution_path: bool,
    pub augmentation_path: bool,
    pub margin: Margin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_margin: Option<Margin>,
    #[serde(rename = "ai_materiality", alias = "ai_material")]
    pub ai_material: bool,
    #[serde(rename = "dominant_ai_function", alias = "ai_function")]
    pub ai_function: AiFunction,
    pub short_rationale: String,
    pub substitution_summary: String,
    pub augmentation_summary: String,
}

impl TaskLabelRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey { country: self.country.clone(), task_id: self.task_id.clone() }
    }

    pub fn is_exposed(&self) -> bool {
        is_exposed(self.exposure)
    }

    /// Margin on exposed records; `None` for non-exposed or unclear records.
    pub fn exposed_margin(&self) -> Option<ExposedMargin> {
        if self.is_exposed() {
            self.margin.exposed_margin()
        } else {
            None
        }
    }
}

/// Identity of a record inside a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub country: String,
    pub task_id: String,
}

/// Country covariates, each optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub iso3: String,
    pub log_gdp_pc: Option<f64>,
    pub human_capital: Option<f64>,
    pub years_schooling: Option<f64>,
    pub capital_intensity: Option<f64>,
    pub investment_gdp: Option<f64>,
    pub gov_effectiveness: Option<f64>,
    pub regulatory_quality: Option<f64>,
    pub internet_users: Option<f64>,
    pub goods_trade_gdp: Option<f64>,
}

impl CovariateRow {
    pub const VARIABLES: [&'static str; 9] = [
        "log_gdp_pc",
        "human_capital",
        "years_schooling",
        "capital_intensity",
        "investment_gdp",
        "gov_effectiveness",
        "regulatory_quality",
        "internet_users",
        "goods_trade_gdp",
    ];

    pub fn new(iso3: impl Into<String>) -> Self {
        CovariateRow { iso3: iso3.into(), ..Default::default() }
    }

    pub fn get(&self, variable: &str) -> Option<f64> {
        *self.slot(variable)?
    }

    pub fn slot_mut(&mut self, variable: &str) -> Option<&mut Option<f64>> {
        Some(match variable {
            "log_gdp_pc" => &mut self.log_gdp_pc,
            "human_capital" => &mut self.human_capital,
            "years_schooling" => &mut self.years_schooling,
            "capital_intensity" => &mut self.capital_intensity,
            "investment_gdp" => &mut self.investment_gdp,
            "gov_effectiveness" => &mut self.gov_effectiveness,
            "regulatory_quality" => &mut self.regulatory_quality,
            "internet_users" => &mut self.internet_users,
            "goods_trade_gdp" => &mut self.goods_trade_gdp,
            _ => return None,
        })
    }

    fn slot(&self, variable: &str) -> Option<&Option<f64>> {
        Some(match variable {
            "log_gdp_pc" => &self.log_gdp_pc,
            "human_capital" => &self.human_capital,
            "years_schooling" => &self.years_schooling,
            "capital_intensity" => &self.capital_intensity,
            "investment_gdp" => &self.investment_gdp,
            "gov_effectiveness" => &self.gov_effectiveness,
            "regulatory_quality" => &self.regulatory_quality,
            "internet_users" => &self.internet_users,
            "goods_trade_gdp" => &self.goods_trade_gdp,
            _ => return None,
        })
    }

    /// True when every listed variable is present.
    pub fn is_complete(&self, variables: &[&str]) -> bool {
        variables.iter().all(|v| self.get(v).is_some())
    }
}
