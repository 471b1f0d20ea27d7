//! Per-unit exposure profile: the task-level indicators that every
//! aggregation layer averages (occupation, ISCO group, industry class).
//!
//! All components are shares of all tasks (or the mean level), so any
//! weighted average of profiles is again a valid profile.

use serde::{Deserialize, Serialize};

use crate::numeric::CompensatedSum;
use crate::types::{Channel, ExposedMargin, TaskLabelRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureProfile {
    pub mean_level: f64,
    pub exposed: f64,
    pub high: f64,
    pub substitute: f64,
    pub augment: f64,
    pub both: f64,
    pub physical_execution: f64,
    pub rule_based_workflow: f64,
    pub planning_control: f64,
    pub inference_scoring: f64,
    pub informational_transformation: f64,
    pub ai_material: f64,
}

const N: usize = 12;

impl ExposureProfile {
    pub const FIELDS: [&'static str; N] = [
        "mean_level",
        "exposed",
        "high",
        "substitute",
        "augment",
        "both",
        "physical_execution",
        "rule_based_workflow",
        "planning_control",
        "inference_scoring",
        "informational_transformation",
        "ai_material",
    ];

    pub fn to_array(&self) -> [f64; N] {
        [
            self.mean_level,
            self.exposed,
            self.high,
            self.substitute,
            self.augment,
            self.both,
            self.physical_execution,
            self.rule_based_workflow,
            self.planning_control,
            self.inference_scoring,
            self.informational_transformation,
            self.ai_material,
        ]
    }

    pub fn from_array(a: [f64; N]) -> Self {
        ExposureProfile {
            mean_level: a[0],
            exposed: a[1],
            high: a[2],
            substitute: a[3],
            augment: a[4],
            both: a[5],
            physical_execution: a[6],
            rule_based_workflow: a[7],
            planning_control: a[8],
            inference_scoring: a[9],
            informational_transformation: a[10],
            ai_material: a[11],
        }
    }

    /// Indicators of a single task label.
    pub fn of_record(r: &TaskLabelRecord) -> Self {
        let exposed = r.is_exposed();
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let margin = r.exposed_margin();
        let channel = |c: Channel| ind(exposed && r.channel == c);
        ExposureProfile {
            mean_level: r.exposure.as_f64(),
            exposed: ind(exposed),
            high: ind(r.exposure.value() == 3),
            substitute: ind(margin == Some(ExposedMargin::Substitute)),
            augment: ind(margin == Some(ExposedMargin::Augment)),
            both: ind(margin == Some(ExposedMargin::Both)),
            physical_execution: channel(Channel::PhysicalExecution),
            rule_based_workflow: channel(Channel::RuleBasedWorkflow),
            planning_control: channel(Channel::PlanningControl),
            inference_scoring: channel(Channel::InferenceScoring),
            informational_transformation: channel(Channel::InformationalTransformation),
            ai_material: ind(exposed && r.ai_material),
        }
    }

    /// Σ w·p / Σ w with compensated sums, in iteration order. `None` when the
    /// weight mass is not positive.
    pub fn weighted_mean<'a, I>(items: I) -> Option<Self>
    where
        I: IntoIterator<Item = (f64, &'a ExposureProfile)>,
    {
        let mut acc = [CompensatedSum::new(); N];
        let mut mass = CompensatedSum::new();
        for (w, p) in items {
            mass.add(w);
            for (a, x) in acc.iter_mut().zip(p.to_array()) {
                a.add(w * x);
            }
        }
        let mass = mass.value();
        if mass <= 0.0 {
            return None;
        }
        let mut out = [0.0; N];
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a.value() / mass;
        }
        Some(Self::from_array(out))
    }

    pub fn mean<'a, I>(items: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a ExposureProfile>,
    {
        Self::weighted_mean(items.into_iter().map(|p| (1.0, p)))
    }

    pub fn margin(&self, m: ExposedMargin) -> f64 {
        match m {
            ExposedMargin::Substitute => self.substitute,
            ExposedMargin::Augment => self.augment,
            ExposedMargin::Both => self.both,
        }
    }

    /// (substitute, augment, both) as shares of all tasks.
    pub fn margin_values(&self) -> [f64; 3] {
        [self.substitute, self.augment, self.both]
    }

    pub fn channel(&self, c: Channel) -> f64 {
        match c {
            Channel::PhysicalExecution => self.physical_execution,
            Channel::RuleBasedWorkflow => self.rule_based_workflow,
            Channel::PlanningControl => self.planning_control,
            Channel::InferenceScoring => self.inference_scoring,
            Channel::InformationalTransformation => self.informational_transformation,
            Channel::None => 0.0,
        }
    }

    /// Margin shares renormalized over exposed tasks with a classified margin.
    pub fn within_margin_shares(&self) -> Option<[f64; 3]> {
        let total = self.substitute + self.augment + self.both;
        (total > 0.0).then(|| [self.substitute / total, self.augment / total, self.both / total])
    }
}
