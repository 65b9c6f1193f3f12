//! Decision tables for the PM, SE, PG and CD roles, the solo variant, and the
//! prompt templates used with remote brains.

pub mod codegen;
mod cd;
mod pg;
mod pm;
mod prompts;
mod se;
mod solo;

use serde::{Deserialize, Serialize};

use crate::agents::{Action, Mode, Observations, Role, StopReason};
use crate::bus::Message;
use crate::exec::{efficiency_pct, JobOutcome, JobRecord};
use crate::tuning::{CandidateStatus, ChangeLog, Version};

pub use cd::{cd_step, CdPolicy};
pub use pg::{next_candidate, pg_step, reduce_tiles, PgPolicy, Plan};
pub use pm::{pm_step, termination_due, PmPolicy};
pub use prompts::{default_template, digest, render_prompt, TEMPLATE_SLOTS};
pub use se::{se_step, SePolicy};
pub use solo::SoloPolicy;

/// A role's decision table. `step` must not depend on anything but the
/// observations and the policy's own state; `commit` folds the decision
/// back into that state.
pub trait RolePolicy {
    fn role(&self) -> Role;
    fn step(&self, obs: &Observations, inbox: &[Message]) -> Vec<Action>;
    fn commit(&mut self, _obs: &Observations, _actions: &[Action]) {}
}

pub fn policy_for(role: Role, mode: Mode) -> Box<dyn RolePolicy> {
    match (mode, role) {
        (Mode::Solo, _) => Box::new(SoloPolicy::default()),
        (Mode::Multi, Role::PM) => Box::new(PmPolicy::default()),
        (Mode::Multi, Role::SE) => Box::new(SePolicy::default()),
        (Mode::Multi, Role::PG) => Box::new(PgPolicy),
        (Mode::Multi, Role::CD) => Box::new(CdPolicy),
    }
}

/// Whether `role` may issue `action` at all.
pub fn permits(role: Role, mode: Mode, action: &Action) -> bool {
    if mode == Mode::Solo {
        return !matches!(action, Action::SpawnAgent { .. });
    }
    match action {
        Action::SpawnAgent { .. } | Action::MarkInvalid { .. } | Action::SetAccuracyTarget { .. } => role == Role::PM,
        Action::Terminate { scope: crate::agents::TerminateScope::Project, .. } => role == Role::PM,
        Action::GenerateCandidate { .. } | Action::SubmitJob { .. } | Action::RecordResult { .. } => role == Role::PG,
        Action::ReviewCandidate { .. } | Action::Publish { .. } => role == Role::CD,
        Action::EmitReport => role == Role::SE,
        _ => true,
    }
}

/// A named behavior preset for scripted runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Compaction summaries drop the prohibition list.
    pub lossy: bool,
    /// `(agent, n)`: that agent's n-th candidate uses the forbidden library.
    pub plant: Option<(String, usize)>,
}

impl Scenario {
    pub const NAMES: [&'static str; 3] = ["baseline", "violation-demo", "memory-loss"];

    pub fn named(name: &str) -> Result<Self, String> {
        let (lossy, plant) = match name {
            "baseline" => (false, None),
            "violation-demo" => (false, Some(("PG1.1".to_string(), 3))),
            "memory-loss" => (true, None),
            other => return Err(format!("unknown scenario `{other}` (known: {})", Self::NAMES.join(", "))),
        };
        Ok(Self { name: name.to_string(), lossy, plant })
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self::named("baseline").unwrap()
    }
}

/// Library the PG reaches for once it no longer remembers the prohibition.
pub const SHORTCUT_LIBRARY: &str = "cuBLAS";

/// Verdict for a finished job under `tolerance`.
pub fn verdict_for(job: &JobRecord, tolerance: f64) -> (CandidateStatus, Option<String>) {
    if let JobOutcome::Error(e) = &job.outcome {
        return (CandidateStatus::Failed, Some(e.clone()));
    }
    match job.outputs.metrics.get("error_norm") {
        None => (CandidateStatus::Failed, Some("no error_norm reported".into())),
        Some(e) if *e <= tolerance => (CandidateStatus::Valid, None),
        Some(e) => (CandidateStatus::Failed, Some(format!("relative error {e:.3e} exceeds tolerance {tolerance:.0e}"))),
    }
}

/// RecordResult actions for this agent's freshly finished jobs.
pub fn record_actions(obs: &Observations) -> Vec<Action> {
    let tol = obs.working_tolerance();
    obs.finished_jobs
        .iter()
        .filter(|j| obs.changelog.get(&j.version).is_some_and(|c| c.status == CandidateStatus::Pending))
        .map(|j| {
            let (verdict, note) = verdict_for(j, tol);
            Action::RecordResult { version: j.version.clone(), verdict, note }
        })
        .collect()
}

/// Results recorded since the last SOTA improvement, judged by current
/// status so retracted results never count as improvements.
pub fn jobs_since_improvement(log: &ChangeLog) -> usize {
    let mut seen = std::collections::BTreeSet::new();
    let mut order = Vec::new();
    for s in log.entries() {
        if s.candidate.status != CandidateStatus::Pending && seen.insert(s.candidate.version.clone()) {
            order.push(s.candidate.version.clone());
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut since = 0;
    for v in order {
        let c = log.get(&v).unwrap();
        match (c.status, c.metrics.as_ref()) {
            (CandidateStatus::Valid, Some(m)) if m.gflops > best => {
                best = m.gflops;
                since = 0;
            }
            _ => since += 1,
        }
    }
    since
}

/// SOTA with its efficiency.
pub fn sota_status(obs: &Observations) -> Option<(Version, f64, f64)> {
    let (v, g) = obs.changelog.sota()?;
    let eff = efficiency_pct(g, obs.peak_gflops()).unwrap_or(0.0);
    Some((v, g, eff))
}

/// Project-level stop conditions shared by the PM and the solo agent.
pub(crate) fn stop_reason(obs: &Observations, sota_clean: bool) -> Option<StopReason> {
    if obs.ledger.spent_points >= obs.spec.budget.max_points {
        return Some(StopReason::BudgetExceeded);
    }
    if obs.tick >= u64::from(obs.spec.time_limits.max) {
        return Some(StopReason::TimeLimit);
    }
    if let Some((_, _, eff)) = sota_status(obs) {
        if sota_clean && eff >= obs.policy.target_efficiency_pct {
            return Some(StopReason::TargetReached);
        }
    }
    if obs.tick >= u64::from(obs.spec.time_limits.reference) && jobs_since_improvement(obs.changelog) >= obs.policy.stall_window {
        return Some(StopReason::Stalled);
    }
    None
}

/// Stable per-agent seed.
pub fn agent_seed(seed: u64, agent: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in agent.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

#[cfg(test)]
pub(crate) mod testing {
    use std::collections::{BTreeMap, BTreeSet};

    use crate::agents::{AgentMemory, AgentRegistry, Mode, Observations, PolicyConfig, Requester, Role};
    use crate::exec::{BudgetLedger, JobRecord, SourceFile};
    use crate::fixtures::SAMPLE_REQUIREMENTS;
    use crate::requirements::{parse_requirements, RequirementSpec};
    use crate::telemetry::{EventLog, Phase, Tick};
    use crate::tuning::{ChangeLog, ParamSpace, StrategyKind, Version};

    use super::Scenario;

    /// Owns everything an `Observations` borrows.
    pub struct Fixture {
        pub tick: Tick,
        pub spec: RequirementSpec,
        pub registry: AgentRegistry,
        pub policy: PolicyConfig,
        pub scenario: Scenario,
        pub space: ParamSpace,
        pub changelog: ChangeLog,
        pub ledger: BudgetLedger,
        pub finished: Vec<JobRecord>,
        pub rejected: Vec<(Version, String)>,
        pub inflight_total: usize,
        pub my_inflight: Vec<Version>,
        pub tolerance: Option<f64>,
        pub sources: BTreeMap<Version, Vec<SourceFile>>,
        pub reviews: BTreeMap<Version, bool>,
        pub violations: BTreeSet<Version>,
        pub published: BTreeSet<Version>,
        pub user_ids: Vec<String>,
    }

    impl Fixture {
        /// The case-study team, fully spawned at tick 0.
        pub fn new() -> Self {
            let spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
            let memory = AgentMemory { prohibitions: spec.forbidden_libraries.clone(), ..Default::default() };
            let mut registry = AgentRegistry::new(spec.agent_roster.clone(), Mode::Multi, memory);
            let mut log = EventLog::in_memory();
            registry.spawn_agent(&mut log, 0, &Requester::Launcher, Role::PM).unwrap();
            for role in [Role::SE, Role::PG, Role::PG, Role::CD] {
                registry.spawn_agent(&mut log, 0, &Requester::Agent("PM".into()), role).unwrap();
            }
            Self {
                tick: 1,
                ledger: BudgetLedger::new(spec.budget.clone()),
                spec,
                registry,
                policy: PolicyConfig::default(),
                scenario: Scenario::default(),
                space: ParamSpace::gemm_default(),
                changelog: ChangeLog::new(),
                finished: Vec::new(),
                rejected: Vec::new(),
                inflight_total: 0,
                my_inflight: Vec::new(),
                tolerance: Some(1e-12),
                sources: BTreeMap::new(),
                reviews: BTreeMap::new(),
                violations: BTreeSet::new(),
                published: BTreeSet::new(),
                user_ids: vec!["u10482".into()],
            }
        }

        pub fn observations(&self, agent: &str) -> Observations<'_> {
            Observations {
                tick: self.tick,
                phase: Phase::Running,
                mode: self.registry.mode(),
                me: self.registry.get(agent).unwrap(),
                registry: &self.registry,
                spec: &self.spec,
                policy: &self.policy,
                scenario: &self.scenario,
                space: &self.space,
                strategy: StrategyKind::Random,
                seed: super::agent_seed(7, agent),
                changelog: &self.changelog,
                ledger: &self.ledger,
                finished_jobs: &self.finished,
                rejected: &self.rejected,
                inflight_total: self.inflight_total,
                my_inflight: &self.my_inflight,
                tolerance: self.tolerance,
                sources: &self.sources,
                reviews: &self.reviews,
                violations: &self.violations,
                published: &self.published,
                user_ids: &self.user_ids,
                woke: false,
            }
        }
    }
}
