//! Agent lifecycle: spawning, token accounting, auto-compaction and the idle
//! hook. Every mutation is mirrored into the event log.

mod brain;
mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::requirements::AgentRoster;
use crate::telemetry::{EventBody, EventLog, TelemetryError, Tick};

pub use brain::{Action, Brain, Decision, Observations, PolicyConfig, StopReason, TerminateScope};
pub use remote::{parse_actions, RemoteBrain, RemoteBrainConfig};
pub use scripted::{ScriptedBrain, TokenCosts};

pub const DEFAULT_COMPACT_THRESHOLD: u64 = 150_000;
pub const DEFAULT_IDLE_PATIENCE: u64 = 3;
pub const LAUNCHER: &str = "LAUNCHER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    PM,
    SE,
    PG,
    CD,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PM" => Ok(Self::PM),
            "SE" => Ok(Self::SE),
            "PG" => Ok(Self::PG),
            "CD" => Ok(Self::CD),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solo,
    #[default]
    Multi,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "solo" => Ok(Self::Solo),
            "multi" => Ok(Self::Multi),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Solo => "solo",
            Self::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentState {
    Spawned,
    Working,
    Idle,
    Compacting,
    Terminated,
}

impl AgentState {
    pub fn can_become(self, to: AgentState) -> bool {
        use AgentState::*;
        match (self, to) {
            (Terminated, _) => false,
            (_, Terminated) => true,
            (Spawned | Working | Idle, Working | Idle) => true,
            (Working | Idle, Compacting) => true,
            (Compacting, Working) => true,
            _ => false,
        }
    }
}

/// What an agent currently remembers of the requirements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AgentMemory {
    pub prohibitions: Vec<String>,
    pub tolerance: Option<f64>,
    pub notes: Vec<String>,
}

impl AgentMemory {
    pub fn forbids(&self, library: &str) -> bool {
        self.prohibitions.iter().any(|p| p.eq_ignore_ascii_case(library))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactionEvent {
    pub tick: Tick,
    pub tokens_before: u64,
    pub tokens_after: u64,
    pub retained_summary: String,
    pub lossy: bool,
}

/// How an agent's brain summarizes its context on compaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionPolicy {
    pub summary_tokens: u64,
    /// Drop requirement prohibitions from the summary.
    pub lossy: bool,
}

impl Default for CompactionPolicy {
    fn default() -> Self {
        Self { summary_tokens: 20_000, lossy: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub id: String,
    pub role: Role,
    pub state: AgentState,
    pub context_tokens: u64,
    pub cumulative_tokens: u64,
    pub compact_threshold: u64,
    pub compactions: Vec<CompactionEvent>,
    pub spawned_at: Tick,
    pub idle_since: Option<Tick>,
    pub wake_pending: bool,
    pub memory: AgentMemory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requester {
    Launcher,
    Agent(String),
}

impl Requester {
    fn name(&self) -> &str {
        match self {
            Self::Launcher => LAUNCHER,
            Self::Agent(a) => a,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("`{0}` may not spawn agents")]
    Unauthorized(String),
    #[error("roster allows no more {0} agents")]
    RosterLimitExceeded(Role),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{0}` has terminated")]
    TerminatedAgent(String),
    #[error("illegal state change {from:?} -> {to:?} for {agent}")]
    IllegalState { agent: String, from: AgentState, to: AgentState },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WakeAction {
    pub agent: String,
    pub idle_ticks: u64,
}

/// The activity database. Terminated agents stay listed.
#[derive(Debug, Clone)]
pub struct AgentRegistry {
    agents: BTreeMap<String, AgentDescriptor>,
    spawn_order: Vec<String>,
    spawned_per_role: BTreeMap<Role, u32>,
    roster: AgentRoster,
    mode: Mode,
    pub compact_threshold: u64,
    pub idle_patience: u64,
    initial_memory: AgentMemory,
}

impl AgentRegistry {
    pub fn new(roster: AgentRoster, mode: Mode, initial_memory: AgentMemory) -> Self {
        Self {
            agents: BTreeMap::new(),
            spawn_order: Vec::new(),
            spawned_per_role: BTreeMap::new(),
            roster,
            mode,
            compact_threshold: DEFAULT_COMPACT_THRESHOLD,
            idle_patience: DEFAULT_IDLE_PATIENCE,
            initial_memory,
        }
    }

    pub fn get(&self, id: &str) -> Option<&AgentDescriptor> {
        self.agents.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut AgentDescriptor> {
        self.agents.get_mut(id)
    }

    /// All agents in spawn order.
    pub fn all(&self) -> impl Iterator<Item = &AgentDescriptor> {
        self.spawn_order.iter().map(|id| &self.agents[id])
    }

    pub fn live(&self) -> impl Iterator<Item = &AgentDescriptor> {
        self.all().filter(|a| a.state != AgentState::Terminated)
    }

    pub fn live_count(&self, role: Role) -> usize {
        self.live().filter(|a| a.role == role).count()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn roster(&self) -> &AgentRoster {
        &self.roster
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn next_id(&self, role: Role) -> String {
        let n = self.spawned_per_role.get(&role).copied().unwrap_or(0) + 1;
        match (role, n) {
            (Role::PG, n) => format!("PG1.{n}"),
            (Role::SE, n) => format!("SE{n}"),
            (r, 1) => r.to_string(),
            (r, n) => format!("{r}{n}"),
        }
    }

    fn live_agent(&self, id: &str) -> Result<&AgentDescriptor, AgentError> {
        let a = self.agents.get(id).ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
        if a.state == AgentState::Terminated {
            return Err(AgentError::TerminatedAgent(id.to_string()));
        }
        Ok(a)
    }

    /// The launcher may start only the manager (or, in solo mode, the single
    /// agent); everything else needs a live PM.
    pub fn spawn_agent(
        &mut self,
        log: &mut EventLog,
        tick: Tick,
        requester: &Requester,
        role: Role,
    ) -> Result<&AgentDescriptor, AgentError> {
        match requester {
            Requester::Launcher => {
                let allowed = match self.mode {
                    Mode::Multi => role == Role::PM,
                    Mode::Solo => role == Role::PG && self.is_empty(),
                };
                if !allowed {
                    return Err(AgentError::Unauthorized(LAUNCHER.into()));
                }
            }
            Requester::Agent(id) => {
                let a = self.live_agent(id).map_err(|_| AgentError::Unauthorized(id.clone()))?;
                if a.role != Role::PM {
                    return Err(AgentError::Unauthorized(id.clone()));
                }
            }
        }
        let spawned = self.spawned_per_role.get(&role).copied().unwrap_or(0);
        if spawned >= self.roster.count(role) {
            return Err(AgentError::RosterLimitExceeded(role));
        }
        let id = self.next_id(role);
        log.append(
            tick,
            &id,
            EventBody::Spawn { role, requester: requester.name().to_string(), compact_threshold: self.compact_threshold },
        )?;
        self.spawned_per_role.insert(role, spawned + 1);
        self.spawn_order.push(id.clone());
        self.agents.insert(
            id.clone(),
            AgentDescriptor {
                id: id.clone(),
                role,
                state: AgentState::Spawned,
                context_tokens: 0,
                cumulative_tokens: 0,
                compact_threshold: self.compact_threshold,
                compactions: Vec::new(),
                spawned_at: tick,
                idle_since: None,
                wake_pending: false,
                memory: self.initial_memory.clone(),
            },
        );
        Ok(&self.agents[&id])
    }

    pub fn record_tokens(&mut self, log: &mut EventLog, tick: Tick, id: &str, delta: u64) -> Result<u64, AgentError> {
        let total = self.live_agent(id)?.context_tokens + delta;
        log.append(tick, id, EventBody::TokenUsage { delta, total })?;
        let a = self.agents.get_mut(id).unwrap();
        a.context_tokens = total;
        a.cumulative_tokens += delta;
        Ok(total)
    }

    /// Compacts when the counter has reached the threshold. `digest` is the
    /// retained summary text; a lossy policy also drops the prohibitions.
    pub fn maybe_autocompact(
        &mut self,
        log: &mut EventLog,
        tick: Tick,
        id: &str,
        policy: CompactionPolicy,
        digest: &str,
    ) -> Result<Option<CompactionEvent>, AgentError> {
        let a = self.agents.get(id).ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
        if a.state == AgentState::Terminated {
            return Err(AgentError::TerminatedAgent(id.to_string()));
        }
        if a.context_tokens < a.compact_threshold {
            return Ok(None);
        }
        let before = a.context_tokens;
        let after = policy.summary_tokens.min(a.compact_threshold.saturating_sub(1)).min(before.saturating_sub(1));
        let mut summary = digest.to_string();
        if !policy.lossy && !a.memory.prohibitions.is_empty() {
            summary.push_str(&format!("\nProhibited: {}", a.memory.prohibitions.join(", ")));
        }
        log.append(
            tick,
            id,
            EventBody::Compaction { tokens_before: before, tokens_after: after, lossy: policy.lossy, summary: summary.clone() },
        )?;
        let a = self.agents.get_mut(id).unwrap();
        a.state = AgentState::Compacting;
        a.context_tokens = after;
        if policy.lossy {
            a.memory.prohibitions.clear();
        }
        a.memory.notes = vec![digest.to_string()];
        let event =
            CompactionEvent { tick, tokens_before: before, tokens_after: after, retained_summary: summary, lossy: policy.lossy };
        a.compactions.push(event.clone());
        a.state = AgentState::Working;
        a.idle_since = None;
        Ok(Some(event))
    }

    pub fn set_state(&mut self, id: &str, tick: Tick, to: AgentState) -> Result<(), AgentError> {
        let a = self.agents.get_mut(id).ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
        if a.state == to {
            return Ok(());
        }
        if !a.state.can_become(to) {
            return Err(AgentError::IllegalState { agent: id.to_string(), from: a.state, to });
        }
        a.idle_since = if to == AgentState::Idle { Some(tick) } else { None };
        a.state = to;
        Ok(())
    }

    /// Records the outcome of a turn. An idle turn starts a new idle period
    /// unless the agent was already idle and not woken.
    pub fn note_decision(&mut self, id: &str, tick: Tick, idle: bool) -> Result<(), AgentError> {
        let a = self.agents.get_mut(id).ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
        if a.state == AgentState::Terminated {
            return Ok(());
        }
        if idle {
            if a.state != AgentState::Idle || a.idle_since.is_none() || a.wake_pending {
                a.idle_since = Some(tick);
            }
            a.state = AgentState::Idle;
        } else {
            a.state = AgentState::Working;
            a.idle_since = None;
        }
        a.wake_pending = false;
        Ok(())
    }

    /// Issues a Wake to every agent idle for at least `idle_patience` ticks.
    pub fn tick_hooks(&mut self, log: &mut EventLog, tick: Tick) -> Result<Vec<WakeAction>, AgentError> {
        let mut out = Vec::new();
        for id in self.spawn_order.clone() {
            let a = &self.agents[&id];
            let Some(since) = a.idle_since else { continue };
            if a.state != AgentState::Idle || a.wake_pending {
                continue;
            }
            let idle = tick.saturating_sub(since);
            if idle >= self.idle_patience {
                log.append(tick, &id, EventBody::Wake { idle_ticks: idle })?;
                self.agents.get_mut(&id).unwrap().wake_pending = true;
                out.push(WakeAction { agent: id, idle_ticks: idle });
            }
        }
        Ok(out)
    }

    pub fn terminate(&mut self, log: &mut EventLog, tick: Tick, id: &str, reason: &str) -> Result<(), AgentError> {
        self.live_agent(id)?;
        log.append(tick, id, EventBody::Terminate { reason: reason.to_string() })?;
        let a = self.agents.get_mut(id).unwrap();
        a.state = AgentState::Terminated;
        a.idle_since = None;
        a.wake_pending = false;
        Ok(())
    }
}
