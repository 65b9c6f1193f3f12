use super::{pg_step, record_actions, stop_reason, RolePolicy};
use crate::agents::{Action, Observations, Role, TerminateScope};
use crate::bus::Message;
use crate::exec::{lint_files, scan_anonymization};
use crate::requirements::Tolerance;
use crate::telemetry::Tick;
use crate::tuning::CandidateStatus;

/// One agent doing every job. It reviews its own work against the
/// prohibitions it still remembers, not against the requirements file.
#[derive(Debug, Clone, Default)]
pub struct SoloPolicy {
    pub last_report: Option<Tick>,
}

fn solo_step(state: &SoloPolicy, obs: &Observations) -> Vec<Action> {
    let mut actions = Vec::new();
    if obs.tolerance.is_none() && obs.me.memory.tolerance.is_none() {
        let tolerance = match obs.spec.accuracy.tolerance {
            Tolerance::Value(t) => t,
            Tolerance::PmAssigned => obs.policy.default_tolerance,
        };
        actions.push(Action::SetAccuracyTarget { tolerance });
    }

    let sota = obs.changelog.sota().map(|s| s.0);
    let mut sota_clean = sota.as_ref().is_some_and(|v| obs.reviews.get(v) == Some(&true));
    for c in obs.changelog.current() {
        if c.status == CandidateStatus::Pending || obs.reviews.contains_key(&c.version) {
            continue;
        }
        let Some(files) = obs.sources.get(&c.version) else { continue };
        let lint = lint_files(files, &obs.me.memory.prohibitions);
        let anonymization = scan_anonymization(files, obs.user_ids);
        let clean = lint.is_empty() && anonymization.is_empty();
        let flagged = !lint.is_empty();
        actions.push(Action::ReviewCandidate { version: c.version.clone(), lint, anonymization });
        if flagged && c.status == CandidateStatus::Valid {
            actions.push(Action::MarkInvalid { version: c.version.clone(), reason: "uses a prohibited library".into() });
        }
        if clean && sota.as_ref() == Some(&c.version) {
            sota_clean = true;
        }
    }
    if obs.spec.publish.enabled && sota_clean {
        if let Some(v) = sota.filter(|v| !obs.published.contains(v)) {
            actions.push(Action::Publish { version: v });
        }
    }

    if let Some(reason) = stop_reason(obs, sota_clean) {
        actions.extend(record_actions(obs));
        actions.push(Action::Terminate { scope: TerminateScope::Project, reason });
        return actions;
    }
    let since = state.last_report.unwrap_or(obs.me.spawned_at);
    if obs.tick.saturating_sub(since) >= obs.policy.report_period {
        actions.push(Action::EmitReport);
    }
    actions.extend(pg_step(obs));
    actions
}

impl RolePolicy for SoloPolicy {
    fn role(&self) -> Role {
        Role::PG
    }

    fn step(&self, obs: &Observations, _inbox: &[Message]) -> Vec<Action> {
        solo_step(self, obs)
    }

    fn commit(&mut self, obs: &Observations, actions: &[Action]) {
        if actions.contains(&Action::EmitReport) {
            self.last_report = Some(obs.tick);
        }
    }
}
