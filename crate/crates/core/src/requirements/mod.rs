//! Requirements-definition document: parsing, validation and the canonical
//! `requirement_spec` serialization.

mod parse;
mod serialize;

use std::collections::BTreeMap;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agents::Role;

pub use parse::{parse_requirements, RequiredSection, REQUIRED_SECTIONS};
pub use serialize::to_document;

/// Default billing rate, points per (second x GPU).
pub const DEFAULT_POINT_RATE: Decimal = Decimal::from_parts(7, 0, 0, false, 3);
/// Default double-precision peak of one GPU, in GFLOPS.
pub const DEFAULT_PEAK_GFLOPS_PER_GPU: f64 = 7800.0;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RequirementsError {
    #[error("requirements document is empty")]
    EmptyDocument,
    #[error("section `{0}` has unparseable content")]
    MalformedSection(String),
}

/// Budget thresholds in points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Budget {
    pub min_points: Decimal,
    pub reference_points: Decimal,
    pub max_points: Decimal,
}

/// Wall-time limits in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TimeLimits {
    pub min: u32,
    pub reference: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Tolerance {
    /// Left to the project manager, who broadcasts a value at project start.
    PmAssigned,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value_type: String,
    pub error_metric: String,
    pub tolerance: Tolerance,
}

impl Default for Accuracy {
    fn default() -> Self {
        Self {
            value_type: "double".into(),
            error_metric: "relative-2norm".into(),
            tolerance: Tolerance::PmAssigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub gpus_per_node: u32,
    pub peak_gflops_per_gpu: f64,
    pub peak_gflops_node: f64,
}

impl Default for Hardware {
    fn default() -> Self {
        Self {
            gpus_per_node: 1,
            peak_gflops_per_gpu: DEFAULT_PEAK_GFLOPS_PER_GPU,
            peak_gflops_node: DEFAULT_PEAK_GFLOPS_PER_GPU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Publish {
    pub enabled: bool,
    pub anonymize: bool,
}

/// Section the parser did not recognize, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub heading: String,
    pub body: String,
}

/// Role -> head count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AgentRoster(pub BTreeMap<Role, u32>);

impl AgentRoster {
    pub fn count(&self, role: Role) -> u32 {
        self.0.get(&role).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.0.values().sum()
    }

    /// Anything beyond a single programmer is a multi-agent roster.
    pub fn is_multi(&self) -> bool {
        self.total() > 1 || self.0.iter().any(|(r, n)| *r != Role::PG && *n > 0)
    }

    pub fn solo() -> Self {
        Self(BTreeMap::from([(Role::PG, 1)]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementSpec {
    pub project_name: String,
    pub budget: Budget,
    pub point_rate: Decimal,
    pub time_limits: TimeLimits,
    pub agent_roster: AgentRoster,
    pub forbidden_libraries: Vec<String>,
    pub accuracy: Accuracy,
    pub hardware: Hardware,
    pub priorities: Vec<String>,
    pub publish: Publish,
    pub missing_items: Vec<String>,
    pub notes: Vec<Note>,
}

impl Default for RequirementSpec {
    fn default() -> Self {
        Self {
            project_name: String::new(),
            budget: Budget::default(),
            point_rate: DEFAULT_POINT_RATE,
            time_limits: TimeLimits::default(),
            agent_roster: AgentRoster::default(),
            forbidden_libraries: Vec::new(),
            accuracy: Accuracy::default(),
            hardware: Hardware::default(),
            priorities: Vec::new(),
            publish: Publish::default(),
            missing_items: Vec::new(),
            notes: Vec::new(),
        }
    }
}

impl RequirementSpec {
    /// Case-insensitive membership test against the prohibition list.
    pub fn forbids(&self, library: &str) -> bool {
        self.forbidden_libraries
            .iter()
            .any(|l| l.eq_ignore_ascii_case(library))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecViolation {
    BudgetOrdering,
    NegativeBudget,
    TimeOrdering,
    NonPositiveRate,
    NonPositivePeak,
    MissingManager,
    MultipleManagers,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::BudgetOrdering => "budget thresholds must satisfy min <= reference <= max",
            Self::NegativeBudget => "budget thresholds must be non-negative",
            Self::TimeOrdering => "time limits must satisfy min <= reference <= max",
            Self::NonPositiveRate => "point rate must be positive",
            Self::NonPositivePeak => "peak performance must be positive",
            Self::MissingManager => "multi-agent roster needs exactly one PM (found none)",
            Self::MultipleManagers => "multi-agent roster needs exactly one PM (found several)",
        };
        f.write_str(s)
    }
}

/// Ordering and range checks. An empty list means the requirements are runnable.
pub fn validate_spec(spec: &RequirementSpec) -> Vec<SpecViolation> {
    let mut out = Vec::new();
    let b = &spec.budget;
    if b.min_points.is_sign_negative() && !b.min_points.is_zero()
        || b.reference_points.is_sign_negative() && !b.reference_points.is_zero()
        || b.max_points.is_sign_negative() && !b.max_points.is_zero()
    {
        out.push(SpecViolation::NegativeBudget);
    }
    if !(b.min_points <= b.reference_points && b.reference_points <= b.max_points) {
        out.push(SpecViolation::BudgetOrdering);
    }
    let t = &spec.time_limits;
    if !(t.min <= t.reference && t.reference <= t.max) {
        out.push(SpecViolation::TimeOrdering);
    }
    if spec.point_rate <= Decimal::ZERO {
        out.push(SpecViolation::NonPositiveRate);
    }
    if !(spec.hardware.peak_gflops_per_gpu > 0.0) {
        out.push(SpecViolation::NonPositivePeak);
    }
    if spec.agent_roster.is_multi() {
        match spec.agent_roster.count(Role::PM) {
            0 => out.push(SpecViolation::MissingManager),
            1 => {}
            _ => out.push(SpecViolation::MultipleManagers),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    fn listing() -> RequirementSpec {
        parse_requirements(crate::fixtures::SAMPLE_REQUIREMENTS).unwrap()
    }

    #[test]
    fn default_rate_constant() {
        assert_eq!(DEFAULT_POINT_RATE, d("0.007"));
    }

    #[test]
    fn listing_is_runnable() {
        assert_eq!(validate_spec(&listing()), vec![]);
    }

    #[test]
    fn inverted_budget_is_flagged() {
        let mut spec = listing();
        spec.budget = Budget {
            min_points: d("500"),
            reference_points: d("100"),
            max_points: d("1000"),
        };
        assert_eq!(validate_spec(&spec), vec![SpecViolation::BudgetOrdering]);
    }

    #[test]
    fn multi_roster_without_pm() {
        let mut spec = listing();
        spec.agent_roster.0.insert(Role::PM, 0);
        assert_eq!(validate_spec(&spec), vec![SpecViolation::MissingManager]);
    }

    #[test]
    fn solo_roster_needs_no_pm() {
        let mut spec = listing();
        spec.agent_roster = AgentRoster::solo();
        assert!(validate_spec(&spec).is_empty());
    }

    #[test]
    fn time_and_rate_checks() {
        let mut spec = listing();
        spec.time_limits = TimeLimits { min: 200, reference: 150, max: 180 };
        spec.point_rate = Decimal::ZERO;
        assert_eq!(
            validate_spec(&spec),
            vec![SpecViolation::TimeOrdering, SpecViolation::NonPositiveRate]
        );
    }

    #[test]
    fn forbids_is_case_insensitive() {
        let spec = listing();
        assert!(spec.forbids("CUBLAS"));
        assert!(spec.forbids("mkl"));
        assert!(!spec.forbids("cuda"));
    }
}
