use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AgentDescriptor, AgentRegistry, CompactionPolicy, Mode, Role};
use crate::bus::{Message, Recipient};
use crate::exec::{
    status_for, AnonymizationViolation, BudgetLedger, BudgetStatus, JobRecord, LintViolation, SourceFile,
};
use crate::requirements::RequirementSpec;
use crate::roles::Scenario;
use crate::telemetry::{Phase, Tick};
use crate::tuning::{CandidateStatus, ChangeLog, ParamSpace, Params, StrategyKind, Version};

/// Why a project (or a single agent) stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum StopReason {
    TargetReached,
    TimeLimit,
    Stalled,
    BudgetExceeded,
    SpaceExhausted,
    TickLimit,
    NoAgents,
    Other(String),
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TargetReached => f.write_str("target efficiency reached"),
            Self::TimeLimit => f.write_str("time limit reached"),
            Self::Stalled => f.write_str("no improvement within the stall window"),
            Self::BudgetExceeded => f.write_str("budget exhausted"),
            Self::SpaceExhausted => f.write_str("parameter space exhausted"),
            Self::TickLimit => f.write_str("tick limit reached"),
            Self::NoAgents => f.write_str("no live agents"),
            Self::Other(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TerminateScope {
    Project,
    SelfOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SendMessage { to: Recipient, body: String },
    GenerateCandidate { version: Version, parent: Option<Version>, label: String, params: Params, sources: Vec<SourceFile> },
    SubmitJob { version: Version },
    /// Metrics are taken from the version's latest finished job.
    RecordResult { version: Version, verdict: CandidateStatus, note: Option<String> },
    ReviewCandidate { version: Version, lint: Vec<LintViolation>, anonymization: Vec<AnonymizationViolation> },
    Publish { version: Version },
    SetAccuracyTarget { tolerance: f64 },
    SpawnAgent { role: Role },
    MarkInvalid { version: Version, reason: String },
    EmitReport,
    Terminate { scope: TerminateScope, reason: StopReason },
    NoOp,
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SendMessage { .. } => "SendMessage",
            Self::GenerateCandidate { .. } => "GenerateCandidate",
            Self::SubmitJob { .. } => "SubmitJob",
            Self::RecordResult { .. } => "RecordResult",
            Self::ReviewCandidate { .. } => "ReviewCandidate",
            Self::Publish { .. } => "Publish",
            Self::SetAccuracyTarget { .. } => "SetAccuracyTarget",
            Self::SpawnAgent { .. } => "SpawnAgent",
            Self::MarkInvalid { .. } => "MarkInvalid",
            Self::EmitReport => "EmitReport",
            Self::Terminate { .. } => "Terminate",
            Self::NoOp => "NoOp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub actions: Vec<Action>,
    pub tokens: u64,
    /// Set when the brain could not produce a real decision.
    pub error: Option<String>,
}

impl Decision {
    pub fn is_idle(&self) -> bool {
        self.actions.iter().all(|a| *a == Action::NoOp)
    }
}

/// Policy knobs the role tables read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Jobs without SOTA improvement before the PM calls a stall.
    pub stall_window: usize,
    pub report_period: Tick,
    pub target_efficiency_pct: f64,
    pub default_tolerance: f64,
    pub max_inflight: usize,
    pub initial_pgs: u32,
    /// Candidates a PG tries per optimization idea before moving on.
    pub trials_per_level: usize,
    pub gpus_per_job: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            stall_window: 5,
            report_period: 50,
            target_efficiency_pct: 60.0,
            default_tolerance: 1e-12,
            max_inflight: 2,
            initial_pgs: 2,
            trials_per_level: 3,
            gpus_per_job: 4,
        }
    }
}

/// The read-only view an agent gets for one decision.
#[derive(Debug, Clone, Copy)]
pub struct Observations<'a> {
    pub tick: Tick,
    pub phase: Phase,
    pub mode: Mode,
    pub me: &'a AgentDescriptor,
    pub registry: &'a AgentRegistry,
    pub spec: &'a RequirementSpec,
    pub policy: &'a PolicyConfig,
    pub scenario: &'a Scenario,
    pub space: &'a ParamSpace,
    pub strategy: StrategyKind,
    /// Per-agent seed.
    pub seed: u64,
    pub changelog: &'a ChangeLog,
    pub ledger: &'a BudgetLedger,
    /// Jobs of this agent that finished since its last turn.
    pub finished_jobs: &'a [JobRecord],
    pub rejected: &'a [(Version, String)],
    pub inflight_total: usize,
    pub my_inflight: &'a [Version],
    pub tolerance: Option<f64>,
    pub sources: &'a BTreeMap<Version, Vec<SourceFile>>,
    /// Review verdicts so far: true when clean.
    pub reviews: &'a BTreeMap<Version, bool>,
    pub violations: &'a BTreeSet<Version>,
    pub published: &'a BTreeSet<Version>,
    pub user_ids: &'a [String],
    pub woke: bool,
}

impl Observations<'_> {
    pub fn budget_status(&self) -> BudgetStatus {
        status_for(self.ledger.spent_points, &self.spec.budget)
    }

    pub fn peak_gflops(&self) -> f64 {
        self.spec.hardware.peak_gflops_per_gpu
    }

    /// Accuracy target this agent works to.
    pub fn working_tolerance(&self) -> f64 {
        self.me.memory.tolerance.or(self.tolerance).unwrap_or(self.policy.default_tolerance)
    }
}

/// The decision maker behind one agent.
pub trait Brain {
    fn decide(&mut self, context: &str, inbox: &[Message], obs: &Observations) -> Decision;

    fn compaction_policy(&self) -> CompactionPolicy {
        CompactionPolicy::default()
    }

    /// Whether the agent has work without being messaged or woken.
    fn wants_turn(&self, _obs: &Observations) -> bool {
        false
    }
}
