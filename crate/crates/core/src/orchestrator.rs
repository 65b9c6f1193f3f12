//! The event loop: polls jobs, gives agents their turns, applies their
//! actions and stops the project.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agents::{
    Action, AgentError, AgentMemory, AgentRegistry, AgentState, Brain, CompactionPolicy, Mode, Observations,
    PolicyConfig, RemoteBrain, RemoteBrainConfig, Requester, Role, ScriptedBrain, StopReason, TerminateScope,
    TokenCosts,
};
use crate::bus::{Bus, BusError, Message};
use crate::exec::{
    anonymize, efficiency_pct, finalize_job, Backend, BudgetStatus, JobCompletion, JobId, JobPoll, JobRecord,
    JobRequest, SourceFile,
};
use crate::requirements::{AgentRoster, RequirementSpec};
use crate::roles::{agent_seed, default_template, digest, permits, policy_for, render_prompt, Scenario};
use crate::telemetry::{export_all, render_markdown_report, EventBody, EventLog, Phase, TelemetryError, Tick, SYSTEM};
use crate::tuning::{CandidateStatus, ChangeLog, Metrics, ParamSpace, StrategyKind, TuningError, Version};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Which decision maker drives the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BrainKind {
    Scripted {
        #[serde(default)]
        costs: TokenCosts,
        #[serde(default = "default_summary_tokens")]
        summary_tokens: u64,
    },
    Remote(RemoteBrainConfig),
}

fn default_summary_tokens() -> u64 {
    CompactionPolicy::default().summary_tokens
}

impl Default for BrainKind {
    fn default() -> Self {
        Self::Scripted { costs: TokenCosts::default(), summary_tokens: default_summary_tokens() }
    }
}

/// Everything a run needs besides the requirements and the backend.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub project: String,
    pub mode: Mode,
    pub seed: u64,
    pub scenario: Scenario,
    pub strategy: StrategyKind,
    pub space: ParamSpace,
    pub policy: PolicyConfig,
    pub brain: BrainKind,
    pub max_ticks: Tick,
    pub resource_group: String,
    pub user_ids: Vec<String>,
    pub compact_threshold: u64,
    pub idle_patience: u64,
    pub templates: BTreeMap<Role, String>,
}

impl RunConfig {
    pub fn new(project: &str, mode: Mode, seed: u64) -> Self {
        Self {
            project: project.to_string(),
            mode,
            seed,
            scenario: Scenario::default(),
            strategy: StrategyKind::Random,
            space: ParamSpace::gemm_default(),
            policy: PolicyConfig::default(),
            brain: BrainKind::default(),
            max_ticks: 1000,
            resource_group: "default".into(),
            user_ids: Vec::new(),
            compact_threshold: crate::agents::DEFAULT_COMPACT_THRESHOLD,
            idle_patience: crate::agents::DEFAULT_IDLE_PATIENCE,
            templates: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reason: StopReason,
    pub stopped_by: String,
    pub sota: Option<(Version, f64, f64)>,
    pub spent_points: Decimal,
    pub budget_status: BudgetStatus,
    pub jobs: u64,
    pub ticks: Tick,
    pub exit_code: i32,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "stopped: {} (by {})", self.reason, self.stopped_by)?;
        match &self.sota {
            Some((v, g, e)) => writeln!(f, "SOTA: v{v} {g:.1} GFLOPS ({e:.2}%)")?,
            None => writeln!(f, "SOTA: none")?,
        }
        writeln!(f, "points spent: {} over {} jobs ({:?})", self.spent_points.normalize(), self.jobs, self.budget_status)?;
        write!(f, "elapsed ticks: {}", self.ticks)
    }
}

struct Inflight {
    request: JobRequest,
    agent: String,
}

const INFLIGHT_LIMIT: &str = "in-flight limit reached";
const DRAIN_LIMIT: Tick = 10_000;

pub struct Orchestrator {
    cfg: RunConfig,
    spec: RequirementSpec,
    root: Option<PathBuf>,
    log: EventLog,
    bus: Bus,
    registry: AgentRegistry,
    brains: BTreeMap<String, Box<dyn Brain>>,
    backend: Box<dyn Backend>,
    changelog: ChangeLog,
    ledger: crate::exec::BudgetLedger,
    tolerance: Option<f64>,
    sources: BTreeMap<Version, Vec<SourceFile>>,
    reviews: BTreeMap<Version, bool>,
    violations: BTreeSet<Version>,
    published: BTreeSet<Version>,
    job_results: BTreeMap<Version, JobRecord>,
    inflight: BTreeMap<JobId, Inflight>,
    next_job: JobId,
    notices: BTreeMap<String, Vec<JobRecord>>,
    rejections: BTreeMap<String, Vec<(Version, String)>>,
    tick: Tick,
    phase: Phase,
    stop: Option<(StopReason, String)>,
    interrupt: Option<Arc<AtomicBool>>,
}

impl Orchestrator {
    /// With a `root` the log, transcript, candidates, job outputs, published
    /// sources and reports live under it; without one everything stays in memory.
    pub fn new(
        cfg: RunConfig,
        spec: RequirementSpec,
        backend: Box<dyn Backend>,
        root: Option<&Path>,
    ) -> Result<Self, RunError> {
        let (log, bus) = match root {
            Some(r) => {
                let transcript = r.join("telemetry/transcript.log");
                std::fs::create_dir_all(r.join("telemetry"))?;
                if transcript.exists() {
                    std::fs::remove_file(&transcript)?;
                }
                (EventLog::create(&r.join("telemetry/events.log"))?, Bus::with_transcript_file(&transcript)?)
            }
            None => (EventLog::in_memory(), Bus::new()),
        };
        let roster = match cfg.mode {
            Mode::Solo => AgentRoster::solo(),
            Mode::Multi => spec.agent_roster.clone(),
        };
        let memory = AgentMemory { prohibitions: spec.forbidden_libraries.clone(), ..Default::default() };
        let mut registry = AgentRegistry::new(roster, cfg.mode, memory);
        registry.compact_threshold = cfg.compact_threshold;
        registry.idle_patience = cfg.idle_patience;
        Ok(Self {
            ledger: crate::exec::BudgetLedger::new(spec.budget.clone()),
            cfg,
            spec,
            root: root.map(Path::to_path_buf),
            log,
            bus,
            registry,
            brains: BTreeMap::new(),
            backend,
            changelog: ChangeLog::new(),
            tolerance: None,
            sources: BTreeMap::new(),
            reviews: BTreeMap::new(),
            violations: BTreeSet::new(),
            published: BTreeSet::new(),
            job_results: BTreeMap::new(),
            inflight: BTreeMap::new(),
            next_job: 1,
            notices: BTreeMap::new(),
            rejections: BTreeMap::new(),
            tick: 0,
            phase: Phase::Setup,
            stop: None,
            interrupt: None,
        })
    }

    pub fn events(&self) -> &[crate::telemetry::TelemetryEvent] {
        self.log.events()
    }

    pub fn changelog(&self) -> &ChangeLog {
        &self.changelog
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn registry(&self) -> &AgentRegistry {
        &self.registry
    }

    pub fn published(&self) -> &BTreeSet<Version> {
        &self.published
    }

    /// Once `flag` is set the manager stops the project at the next tick.
    pub fn set_interrupt(&mut self, flag: Arc<AtomicBool>) {
        self.interrupt = Some(flag);
    }

    /// Runs to termination.
    pub fn run(&mut self) -> Result<RunSummary, RunError> {
        self.start()?;
        while self.stop.is_none() {
            if self.tick >= self.cfg.max_ticks {
                self.stop = Some((StopReason::TickLimit, SYSTEM.into()));
                break;
            }
            if self.interrupt.as_ref().is_some_and(|f| f.load(Ordering::SeqCst)) {
                let lead = self.registry.live().find(|a| a.role == Role::PM).or_else(|| self.registry.live().next());
                let by = lead.map_or_else(|| SYSTEM.to_string(), |a| a.id.clone());
                self.stop = Some((StopReason::Other("interrupted".into()), by));
                break;
            }
            self.step()?;
            if self.stop.is_none() {
                self.tick += 1;
            }
        }
        self.finish()
    }

    fn start(&mut self) -> Result<(), RunError> {
        self.log.append(
            0,
            SYSTEM,
            EventBody::ProjectStarted {
                project: self.cfg.project.clone(),
                mode: self.cfg.mode,
                seed: self.cfg.seed,
                scenario: self.cfg.scenario.name.clone(),
                backend: self.backend.tag().to_string(),
                budget: self.spec.budget.clone(),
                point_rate: self.spec.point_rate,
                peak_gflops: self.spec.hardware.peak_gflops_per_gpu,
            },
        )?;
        let first = match self.cfg.mode {
            Mode::Solo => Role::PG,
            Mode::Multi => Role::PM,
        };
        self.spawn(&Requester::Launcher, first)?;
        self.phase = Phase::Running;
        self.log.append(0, SYSTEM, EventBody::PhaseChange { phase: Phase::Running, reason: None })?;
        Ok(())
    }

    fn spawn(&mut self, requester: &Requester, role: Role) -> Result<String, AgentError> {
        let id = self.registry.spawn_agent(&mut self.log, self.tick, requester, role)?.id.clone();
        self.bus.register(&id, role);
        let brain: Box<dyn Brain> = match &self.cfg.brain {
            BrainKind::Scripted { costs, summary_tokens } => Box::new(ScriptedBrain::new(
                policy_for(role, self.cfg.mode),
                *costs,
                CompactionPolicy { summary_tokens: *summary_tokens, lossy: self.cfg.scenario.lossy },
            )),
            BrainKind::Remote(rc) => {
                let mut rc = rc.clone();
                rc.compaction.lossy |= self.cfg.scenario.lossy;
                Box::new(RemoteBrain::new(role, rc))
            }
        };
        self.brains.insert(id.clone(), brain);
        Ok(id)
    }

    /// One tick: job completions, then agent turns, then the idle hook.
    pub fn step(&mut self) -> Result<(), RunError> {
        self.poll_jobs()?;
        for id in self.turn_order() {
            if self.stop.is_some() || !self.bus.is_live(&id) {
                continue;
            }
            if self.wants_turn(&id) {
                self.take_turn(&id)?;
            }
        }
        self.registry.tick_hooks(&mut self.log, self.tick)?;
        if self.stop.is_none() && self.registry.live().next().is_none() {
            self.stop = Some((StopReason::NoAgents, SYSTEM.into()));
        }
        Ok(())
    }

    fn poll_jobs(&mut self) -> Result<(), RunError> {
        let ids: Vec<JobId> = self.inflight.keys().copied().collect();
        for id in ids {
            let completion = match self.backend.poll(id, self.tick) {
                Ok(JobPoll::Finished(c)) => c,
                Ok(JobPoll::Pending | JobPoll::Running) => continue,
                Err(e) => JobCompletion {
                    started: self.tick,
                    ended: self.tick,
                    elapsed_s: Decimal::ZERO,
                    stdout: String::new(),
                    stderr: String::new(),
                    error: Some(e.to_string()),
                    charge: false,
                },
            };
            let job = self.inflight.remove(&id).unwrap();
            let out = self.root.as_ref().map(|r| (r.join(format!("jobs/{id}/out")), r.clone()));
            let record = finalize_job(
                &job.request,
                self.backend.tag(),
                completion,
                self.spec.point_rate,
                out.as_ref().map(|(d, b)| (d.as_path(), b.as_path())),
            )
            .map_err(|e| RunError::Io(e.to_string()))?;
            self.log.append(self.tick, &job.agent, EventBody::JobDone { record: record.clone() })?;
            self.ledger.charge(&record);
            self.log.append(
                self.tick,
                SYSTEM,
                EventBody::BudgetUpdate {
                    spent_points: self.ledger.spent_points,
                    job_count: self.ledger.job_count,
                    status: self.ledger.status(),
                },
            )?;
            self.job_results.insert(record.version.clone(), record.clone());
            if self.bus.is_live(&job.agent) {
                self.notices.entry(job.agent).or_default().push(record);
            }
        }
        Ok(())
    }

    /// Programmers with fresh results first, then reviewer, manager and
    /// engineer, then the remaining programmers.
    fn turn_order(&self) -> Vec<String> {
        let live: Vec<(&str, Role)> = self.registry.live().map(|a| (a.id.as_str(), a.role)).collect();
        let fresh = |id: &str| self.notices.get(id).is_some_and(|n| !n.is_empty());
        let mut order: Vec<String> =
            live.iter().filter(|(id, r)| *r == Role::PG && fresh(id)).map(|(id, _)| id.to_string()).collect();
        for role in [Role::CD, Role::PM, Role::SE] {
            order.extend(live.iter().filter(|(_, r)| *r == role).map(|(id, _)| id.to_string()));
        }
        order.extend(live.iter().filter(|(id, r)| *r == Role::PG && !fresh(id)).map(|(id, _)| id.to_string()));
        order
    }

    fn wants_turn(&self, id: &str) -> bool {
        let Some(a) = self.registry.get(id) else { return false };
        if matches!(a.state, AgentState::Spawned | AgentState::Working) || a.wake_pending {
            return true;
        }
        if self.bus.pending(id) > 0
            || self.notices.get(id).is_some_and(|n| !n.is_empty())
            || self.rejections.get(id).is_some_and(|r| !r.is_empty())
        {
            return true;
        }
        let Some(brain) = self.brains.get(id) else { return false };
        let my_inflight = self.my_inflight(id);
        let obs = self.observations(id, &[], &[], &my_inflight);
        brain.wants_turn(&obs)
    }

    fn my_inflight(&self, id: &str) -> Vec<Version> {
        self.inflight.values().filter(|j| j.agent == id).map(|j| j.request.version.clone()).collect()
    }

    fn observations<'a>(
        &'a self,
        id: &str,
        finished: &'a [JobRecord],
        rejected: &'a [(Version, String)],
        my_inflight: &'a [Version],
    ) -> Observations<'a> {
        let me = self.registry.get(id).expect("live agent");
        Observations {
            tick: self.tick,
            phase: self.phase,
            mode: self.cfg.mode,
            me,
            registry: &self.registry,
            spec: &self.spec,
            policy: &self.cfg.policy,
            scenario: &self.cfg.scenario,
            space: &self.cfg.space,
            strategy: self.cfg.strategy,
            seed: agent_seed(self.cfg.seed, id),
            changelog: &self.changelog,
            ledger: &self.ledger,
            finished_jobs: finished,
            rejected,
            inflight_total: self.inflight.len(),
            my_inflight,
            tolerance: self.tolerance,
            sources: &self.sources,
            reviews: &self.reviews,
            violations: &self.violations,
            published: &self.published,
            user_ids: &self.cfg.user_ids,
            woke: me.wake_pending,
        }
    }

    /// Folds requirement reminders from messages into the agent's memory.
    fn absorb(&mut self, id: &str, inbox: &[Message]) {
        let Some(a) = self.registry.get_mut(id) else { return };
        for m in inbox {
            for line in m.body.lines() {
                if let Some(rest) = line.trim().strip_prefix("Prohibited:") {
                    for lib in rest.split(',').map(str::trim).filter(|l| !l.is_empty()) {
                        if !a.memory.forbids(lib) {
                            a.memory.prohibitions.push(lib.to_string());
                        }
                    }
                } else if let Some(rest) = line.trim().strip_prefix("Target accuracy:") {
                    if let Ok(t) = rest.trim().parse::<f64>() {
                        a.memory.tolerance = Some(t);
                    }
                }
            }
        }
    }

    fn take_turn(&mut self, id: &str) -> Result<(), RunError> {
        let inbox = self.bus.drain(id, self.tick)?;
        self.absorb(id, &inbox);
        let finished = self.notices.remove(id).unwrap_or_default();
        let rejected = self.rejections.remove(id).unwrap_or_default();
        let my_inflight = self.my_inflight(id);
        let role = self.registry.get(id).map(|a| a.role).expect("live agent");
        let mut brain = self.brains.remove(id).expect("brain for live agent");
        let (decision, summary) = {
            let obs = self.observations(id, &finished, &rejected, &my_inflight);
            let template =
                self.cfg.templates.get(&role).cloned().unwrap_or_else(|| default_template(role, self.cfg.mode));
            let prompt = render_prompt(&template, &obs, &inbox);
            (brain.decide(&prompt, &inbox, &obs), digest(&obs))
        };
        let compaction = brain.compaction_policy();
        self.brains.insert(id.to_string(), brain);
        if let Some(e) = &decision.error {
            self.log.append(self.tick, id, EventBody::Error { message: e.clone() })?;
        }
        self.registry.record_tokens(&mut self.log, self.tick, id, decision.tokens)?;
        self.registry.maybe_autocompact(&mut self.log, self.tick, id, compaction, &summary)?;
        for action in &decision.actions {
            if !self.bus.is_live(id) {
                break;
            }
            if !permits(role, self.cfg.mode, action) {
                self.log.append(
                    self.tick,
                    id,
                    EventBody::Error { message: format!("{role} may not perform {}", action.kind()) },
                )?;
                continue;
            }
            self.apply(id, action.clone())?;
        }
        let unrecorded: Vec<JobRecord> = finished
            .into_iter()
            .filter(|j| self.changelog.get(&j.version).is_some_and(|c| c.status == CandidateStatus::Pending))
            .collect();
        if self.bus.is_live(id) {
            if !unrecorded.is_empty() {
                self.notices.entry(id.to_string()).or_default().extend(unrecorded);
            }
            self.registry.note_decision(id, self.tick, decision.is_idle())?;
        }
        Ok(())
    }

    fn error(&mut self, id: &str, message: String) -> Result<(), RunError> {
        self.log.append(self.tick, id, EventBody::Error { message })?;
        Ok(())
    }

    fn last_snapshot(&self) -> crate::tuning::Snapshot {
        self.changelog.entries().last().cloned().expect("snapshot just appended")
    }

    fn reject(&mut self, id: &str, version: Version, reason: String) -> Result<(), RunError> {
        self.log.append(self.tick, id, EventBody::JobRejected { version: version.clone(), reason: reason.clone() })?;
        self.rejections.entry(id.to_string()).or_default().push((version, reason));
        Ok(())
    }

    fn apply(&mut self, id: &str, action: Action) -> Result<(), RunError> {
        let tick = self.tick;
        match action {
            Action::NoOp => {}
            Action::SendMessage { to, body } => match self.bus.send(id, to, &body, tick) {
                Ok(message) => {
                    self.log.append(tick, id, EventBody::MessageSent { message })?;
                }
                Err(e) => self.error(id, e.to_string())?,
            },
            Action::GenerateCandidate { version, parent, label, params, sources } => {
                let source_ref = format!("candidates/v{version}");
                match self.changelog.register_candidate(tick, version.clone(), parent, params, &source_ref, &label, id) {
                    Ok(_) => {
                        if let Some(root) = &self.root {
                            let dir = root.join(&source_ref);
                            std::fs::create_dir_all(&dir)?;
                            for f in &sources {
                                std::fs::write(dir.join(&f.name), &f.content)?;
                            }
                        }
                        self.sources.insert(version, sources);
                        let snapshot = self.last_snapshot();
                        self.log.append(tick, id, EventBody::CandidateRegistered { snapshot })?;
                    }
                    Err(e) => self.error(id, e.to_string())?,
                }
            }
            Action::SubmitJob { version } => self.submit(id, version)?,
            Action::RecordResult { version, verdict, note } => {
                let metrics = self.job_results.get(&version).and_then(|j| {
                    let g = *j.outputs.metrics.get("gflops")?;
                    Some(Metrics {
                        gflops: g,
                        efficiency_pct: efficiency_pct(g, self.spec.hardware.peak_gflops_per_gpu).ok()?,
                        error_norm: j.outputs.metrics.get("error_norm").copied().unwrap_or(f64::NAN),
                        elapsed_s: j.elapsed_s,
                        gpus: j.gpus,
                    })
                });
                let metrics = if verdict == CandidateStatus::Valid || metrics.as_ref().is_some_and(|m| !m.error_norm.is_nan()) {
                    metrics
                } else {
                    None
                };
                match self.changelog.record_result(tick, &version, metrics, verdict, note) {
                    Ok(_) => {
                        let snapshot = self.last_snapshot();
                        self.log.append(tick, id, EventBody::ResultRecorded { snapshot })?;
                    }
                    Err(e) => self.error(id, e.to_string())?,
                }
            }
            Action::ReviewCandidate { version, lint, anonymization } => {
                if self.changelog.get(&version).is_none() {
                    return self.error(id, TuningError::UnknownVersion(version).to_string());
                }
                let clean = lint.is_empty() && anonymization.is_empty();
                self.reviews.insert(version.clone(), clean);
                if !lint.is_empty() {
                    self.violations.insert(version.clone());
                }
                let body = if clean {
                    EventBody::Review { version, clean }
                } else {
                    EventBody::Violation { version, lint, anonymization }
                };
                self.log.append(tick, id, body)?;
            }
            Action::Publish { version } => self.publish(id, version)?,
            Action::SetAccuracyTarget { tolerance } => {
                self.tolerance = Some(tolerance);
                if let Some(a) = self.registry.get_mut(id) {
                    a.memory.tolerance = Some(tolerance);
                }
                self.log.append(tick, id, EventBody::AccuracyTarget { tolerance })?;
            }
            Action::SpawnAgent { role } => {
                if let Err(e) = self.spawn(&Requester::Agent(id.to_string()), role) {
                    self.error(id, e.to_string())?;
                }
            }
            Action::MarkInvalid { version, reason } => match self.changelog.mark_invalid(tick, &version, &reason) {
                Ok(_) => {
                    let snapshot = self.last_snapshot();
                    self.log.append(tick, id, EventBody::ResultRecorded { snapshot })?;
                }
                Err(e) => self.error(id, e.to_string())?,
            },
            Action::EmitReport => self.report(id)?,
            Action::Terminate { scope: TerminateScope::Project, reason } => {
                if self.stop.is_none() {
                    self.stop = Some((reason, id.to_string()));
                }
            }
            Action::Terminate { scope: TerminateScope::SelfOnly, reason } => {
                self.bus.retire(id, tick)?;
                self.registry.terminate(&mut self.log, tick, id, &reason.to_string())?;
                self.brains.remove(id);
                self.notices.remove(id);
                self.rejections.remove(id);
            }
        }
        Ok(())
    }

    fn submit(&mut self, id: &str, version: Version) -> Result<(), RunError> {
        let Some(c) = self.changelog.get(&version).cloned() else {
            return self.error(id, TuningError::UnknownVersion(version).to_string());
        };
        if c.status != CandidateStatus::Pending || self.inflight.values().any(|j| j.request.version == version) {
            return self.error(id, format!("v{version} is not awaiting a run"));
        }
        if self.ledger.exhausted() || self.ledger.status() == BudgetStatus::Exceeded {
            return self.reject(id, version, "budget exhausted".into());
        }
        if self.inflight.len() >= self.cfg.policy.max_inflight {
            let reason = format!("{INFLIGHT_LIMIT} ({} jobs)", self.cfg.policy.max_inflight);
            return self.reject(id, version, reason);
        }
        let request = JobRequest {
            id: self.next_job,
            version: version.clone(),
            label: c.label.clone(),
            params: c.params.clone(),
            sources: self.sources.get(&version).cloned().unwrap_or_default(),
            gpus: self.cfg.policy.gpus_per_job,
            resource_group: self.cfg.resource_group.clone(),
            submitted: self.tick,
        };
        match self.backend.submit(&request) {
            Ok(()) => {
                self.next_job += 1;
                self.log.append(
                    self.tick,
                    id,
                    EventBody::JobSubmitted {
                        job: request.id,
                        version,
                        backend: self.backend.tag().to_string(),
                        gpus: request.gpus,
                        resource_group: request.resource_group.clone(),
                    },
                )?;
                self.inflight.insert(request.id, Inflight { request, agent: id.to_string() });
                Ok(())
            }
            Err(e) => self.reject(id, version, e.to_string()),
        }
    }

    fn publish(&mut self, id: &str, version: Version) -> Result<(), RunError> {
        let valid = self.changelog.get(&version).is_some_and(|c| c.status == CandidateStatus::Valid);
        if !valid || self.reviews.get(&version) != Some(&true) {
            return self.error(id, format!("v{version} is not a reviewed valid candidate"));
        }
        let rel = format!("publish/v{version}");
        if let Some(root) = &self.root {
            let dir = root.join(&rel);
            std::fs::create_dir_all(&dir)?;
            for f in self.sources.get(&version).map(Vec::as_slice).unwrap_or_default() {
                let text = if self.spec.publish.anonymize { anonymize(&f.content, &self.cfg.user_ids) } else { f.content.clone() };
                std::fs::write(dir.join(&f.name), text)?;
            }
        }
        self.published.insert(version.clone());
        self.log.append(self.tick, id, EventBody::Published { version, path: rel })?;
        Ok(())
    }

    fn report_summary(&self) -> String {
        let sota = match self.changelog.sota() {
            Some((v, g)) => {
                let e = efficiency_pct(g, self.spec.hardware.peak_gflops_per_gpu).unwrap_or(0.0);
                format!("SOTA v{v} {g:.1} GFLOPS ({e:.2}%)")
            }
            None => "no valid candidate".into(),
        };
        format!(
            "{sota}; {} points over {} jobs ({:?})",
            self.ledger.spent_points.normalize(),
            self.ledger.job_count,
            self.ledger.status()
        )
    }

    /// Exports and report are regenerated from the log written so far.
    fn report(&mut self, id: &str) -> Result<(), RunError> {
        let path = "reports/report.md".to_string();
        if let Some(root) = &self.root {
            export_all(self.log.events(), &root.join("telemetry/exports"))?;
            render_markdown_report(self.log.events(), &root.join("reports"))?;
        }
        let summary = self.report_summary();
        self.log.append(self.tick, id, EventBody::Report { path, summary })?;
        Ok(())
    }

    fn finish(&mut self) -> Result<RunSummary, RunError> {
        let (reason, by) = self.stop.clone().unwrap_or((StopReason::NoAgents, SYSTEM.into()));
        self.phase = Phase::Terminating;
        self.log.append(self.tick, &by, EventBody::PhaseChange { phase: Phase::Terminating, reason: Some(reason.to_string()) })?;
        let deadline = self.tick + DRAIN_LIMIT;
        while !self.inflight.is_empty() && self.tick < deadline {
            self.poll_jobs()?;
            if !self.inflight.is_empty() {
                self.tick += 1;
            }
        }
        let live: Vec<String> = self.registry.live().map(|a| a.id.clone()).collect();
        for id in live {
            self.bus.retire(&id, self.tick)?;
            self.registry.terminate(&mut self.log, self.tick, &id, &reason.to_string())?;
        }
        self.brains.clear();
        self.phase = Phase::Terminated;
        self.log.append(self.tick, &by, EventBody::PhaseChange { phase: Phase::Terminated, reason: Some(reason.to_string()) })?;
        if let Some(root) = &self.root {
            export_all(self.log.events(), &root.join("telemetry/exports"))?;
            render_markdown_report(self.log.events(), &root.join("reports"))?;
        }
        let peak = self.spec.hardware.peak_gflops_per_gpu;
        let status = self.ledger.status();
        Ok(RunSummary {
            sota: self.changelog.sota().map(|(v, g)| (v, g, efficiency_pct(g, peak).unwrap_or(0.0))),
            stopped_by: by,
            reason,
            spent_points: self.ledger.spent_points,
            budget_status: status,
            jobs: self.ledger.job_count,
            ticks: self.tick,
            exit_code: if status == BudgetStatus::Exceeded { 2 } else { 0 },
        })
    }
}
