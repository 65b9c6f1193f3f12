//! State reconstruction from the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EventBody, Phase, TelemetryError, TelemetryEvent, Tick};
use crate::agents::{Mode, Role};
use crate::exec::BudgetLedger;
use crate::tuning::{ChangeLog, Version};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentLifecycle {
    Live,
    Terminated,
}

/// What the activity database holds for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub role: Role,
    pub lifecycle: AgentLifecycle,
    pub context_tokens: u64,
    pub cumulative_tokens: u64,
    pub compactions: u32,
    pub spawned_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayState {
    pub project: Option<String>,
    pub mode: Option<Mode>,
    pub peak_gflops: Option<f64>,
    pub phase: Option<Phase>,
    pub termination_reason: Option<String>,
    pub ledger: BudgetLedger,
    pub changelog: ChangeLog,
    pub agents: BTreeMap<String, AgentSnapshot>,
    pub tolerance: Option<f64>,
    pub published: Vec<Version>,
    pub violations: Vec<(Version, Vec<String>)>,
    pub last_tick: Tick,
}

impl ReplayState {
    pub fn apply(&mut self, e: &TelemetryEvent) -> Result<(), TelemetryError> {
        let bad = |message: String| TelemetryError::Inconsistent { seq: e.seq, message };
        self.last_tick = self.last_tick.max(e.tick);
        match &e.body {
            EventBody::ProjectStarted { project, mode, budget, peak_gflops, .. } => {
                self.project = Some(project.clone());
                self.mode = Some(*mode);
                self.peak_gflops = Some(*peak_gflops);
                self.ledger = BudgetLedger::new(budget.clone());
            }
            EventBody::PhaseChange { phase, reason } => {
                self.phase = Some(*phase);
                if *phase == Phase::Terminated {
                    self.termination_reason = reason.clone();
                }
            }
            EventBody::Spawn { role, .. } => {
                if self.agents.contains_key(&e.agent) {
                    return Err(bad(format!("{} spawned twice", e.agent)));
                }
                self.agents.insert(
                    e.agent.clone(),
                    AgentSnapshot {
                        role: *role,
                        lifecycle: AgentLifecycle::Live,
                        context_tokens: 0,
                        cumulative_tokens: 0,
                        compactions: 0,
                        spawned_at: e.tick,
                    },
                );
            }
            EventBody::Terminate { .. } => {
                let a = self.agents.get_mut(&e.agent).ok_or_else(|| bad(format!("unknown agent {}", e.agent)))?;
                a.lifecycle = AgentLifecycle::Terminated;
            }
            EventBody::TokenUsage { delta, total } => {
                let a = self.agents.get_mut(&e.agent).ok_or_else(|| bad(format!("unknown agent {}", e.agent)))?;
                if a.lifecycle == AgentLifecycle::Terminated {
                    return Err(bad(format!("{} charged after termination", e.agent)));
                }
                if a.context_tokens + delta != *total {
                    return Err(bad(format!("{}: {} + {delta} != {total}", e.agent, a.context_tokens)));
                }
                a.context_tokens = *total;
                a.cumulative_tokens += delta;
            }
            EventBody::Compaction { tokens_before, tokens_after, .. } => {
                let a = self.agents.get_mut(&e.agent).ok_or_else(|| bad(format!("unknown agent {}", e.agent)))?;
                if a.context_tokens != *tokens_before || tokens_after >= tokens_before {
                    return Err(bad(format!("{} compaction does not match its counter", e.agent)));
                }
                a.context_tokens = *tokens_after;
                a.compactions += 1;
            }
            EventBody::CandidateRegistered { snapshot } | EventBody::ResultRecorded { snapshot } => {
                self.changelog.apply(snapshot.clone()).map_err(|err| bad(err.to_string()))?;
            }
            EventBody::JobDone { record } => self.ledger.charge(record),
            EventBody::BudgetUpdate { spent_points, job_count, .. } => {
                if *spent_points != self.ledger.spent_points || *job_count != self.ledger.job_count {
                    return Err(bad(format!(
                        "budget update {spent_points} / {job_count} disagrees with job sum {} / {}",
                        self.ledger.spent_points, self.ledger.job_count
                    )));
                }
            }
            EventBody::AccuracyTarget { tolerance } => self.tolerance = Some(*tolerance),
            EventBody::Published { version, .. } => self.published.push(version.clone()),
            EventBody::Violation { version, lint, anonymization } => {
                let mut what: Vec<String> = lint.iter().map(|l| l.library.clone()).collect();
                what.extend(anonymization.iter().map(|a| format!("{:?}", a.finding)));
                what.dedup();
                self.violations.push((version.clone(), what));
            }
            EventBody::Wake { .. }
            | EventBody::MessageSent { .. }
            | EventBody::JobSubmitted { .. }
            | EventBody::JobRejected { .. }
            | EventBody::Review { .. }
            | EventBody::Report { .. }
            | EventBody::Error { .. } => {}
        }
        Ok(())
    }
}

/// Folds the whole log into state.
pub fn replay(events: &[TelemetryEvent]) -> Result<ReplayState, TelemetryError> {
    let mut state = ReplayState::default();
    for e in events {
        state.apply(e)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use rust_decimal::Decimal;

    use super::*;
    use crate::telemetry::{EventLog, SYSTEM};

    #[test]
    fn token_totals_are_checked() {
        let mut log = EventLog::in_memory();
        log.append(0, "PM", EventBody::Spawn { role: Role::PM, requester: "LAUNCHER".into(), compact_threshold: 10 })
            .unwrap();
        log.append(1, "PM", EventBody::TokenUsage { delta: 5, total: 5 }).unwrap();
        log.append(2, "PM", EventBody::Compaction { tokens_before: 5, tokens_after: 1, lossy: false, summary: "s".into() })
            .unwrap();
        log.append(3, "PM", EventBody::TokenUsage { delta: 2, total: 3 }).unwrap();
        let s = replay(log.events()).unwrap();
        assert_eq!(s.agents["PM"].context_tokens, 3);
        assert_eq!(s.agents["PM"].cumulative_tokens, 7);
        assert_eq!(s.agents["PM"].compactions, 1);

        log.append(4, "PM", EventBody::TokenUsage { delta: 2, total: 9 }).unwrap();
        assert!(matches!(replay(log.events()), Err(TelemetryError::Inconsistent { seq: 5, .. })));
    }

    #[test]
    fn budget_updates_must_match_jobs() {
        let mut log = EventLog::in_memory();
        log.append(
            0,
            SYSTEM,
            EventBody::BudgetUpdate {
                spent_points: Decimal::ONE,
                job_count: 1,
                status: crate::exec::BudgetStatus::UnderMin,
            },
        )
        .unwrap();
        assert!(replay(log.events()).is_err());
    }

    #[test]
    fn empty_log_is_empty_state() {
        assert_eq!(replay(&[]).unwrap(), ReplayState::default());
    }
}
