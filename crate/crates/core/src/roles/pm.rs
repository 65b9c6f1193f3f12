use super::{jobs_since_improvement, sota_status, stop_reason, RolePolicy};
use crate::agents::{Action, Observations, Role, StopReason, TerminateScope};
use crate::bus::{Message, Recipient};
use crate::exec::BudgetStatus;
use crate::requirements::Tolerance;
use crate::tuning::CandidateStatus;

/// Jobs without improvement before the PM adds another programmer.
const STAFF_UP_AFTER: usize = 2;

#[derive(Debug, Clone, Default)]
pub struct PmPolicy {
    pub cautioned: bool,
}

fn prohibited_line(obs: &Observations) -> String {
    format!("Prohibited: {}", obs.spec.forbidden_libraries.join(", "))
}

fn spawned(obs: &Observations, role: Role) -> usize {
    obs.registry.all().filter(|a| a.role == role).count()
}

/// Whether the project should stop now, and why.
pub fn termination_due(obs: &Observations) -> Option<StopReason> {
    if spawned(obs, Role::PG) > 0 && obs.registry.live_count(Role::PG) == 0 {
        return Some(StopReason::SpaceExhausted);
    }
    let clean = obs.changelog.sota().is_some_and(|(v, _)| obs.reviews.get(&v) == Some(&true));
    stop_reason(obs, clean)
}

pub fn pm_step(state: &PmPolicy, obs: &Observations) -> Vec<Action> {
    let mut actions = Vec::new();

    if obs.registry.len() == 1 {
        for role in std::iter::once(Role::SE)
            .chain(std::iter::repeat_n(Role::PG, obs.policy.initial_pgs as usize))
            .chain(std::iter::once(Role::CD))
        {
            actions.push(Action::SpawnAgent { role });
        }
        let tolerance = match obs.spec.accuracy.tolerance {
            Tolerance::Value(t) => t,
            Tolerance::PmAssigned => obs.policy.default_tolerance,
        };
        actions.push(Action::SetAccuracyTarget { tolerance });
        actions.push(Action::SendMessage {
            to: Recipient::Broadcast,
            body: format!("Target accuracy: {tolerance:e}\n{}", prohibited_line(obs)),
        });
        return actions;
    }

    for v in obs.violations {
        if obs.changelog.get(v).is_some_and(|c| matches!(c.status, CandidateStatus::Valid | CandidateStatus::Pending)) {
            actions.push(Action::MarkInvalid { version: v.clone(), reason: "uses a prohibited library".into() });
            actions.push(Action::SendMessage {
                to: Recipient::Broadcast,
                body: format!(
                    "Emergency stop! v{v} uses a prohibited library. Please exclude it from the graph.\n{}",
                    prohibited_line(obs)
                ),
            });
        }
    }
    if !actions.is_empty() {
        return actions;
    }

    if let Some(reason) = termination_due(obs) {
        let sota = match sota_status(obs) {
            Some((v, g, eff)) => format!("v{v} at {g:.1} GFLOPS ({eff:.2}%)"),
            None => "none".into(),
        };
        actions.push(Action::SendMessage {
            to: Recipient::Broadcast,
            body: format!("Stopping the project: {reason}. Final SOTA: {sota}."),
        });
        actions.push(Action::Terminate { scope: TerminateScope::Project, reason });
        return actions;
    }

    let status = obs.budget_status();
    if status == BudgetStatus::NearMax && !state.cautioned {
        actions.push(Action::SendMessage {
            to: Recipient::Broadcast,
            body: format!(
                "Budget caution: {} of {} points spent. Submit only promising candidates.",
                obs.ledger.spent_points, obs.spec.budget.max_points
            ),
        });
    }
    let pg_slots = (obs.registry.roster().count(Role::PG) as usize).saturating_sub(spawned(obs, Role::PG));
    if pg_slots > 0
        && matches!(status, BudgetStatus::UnderMin | BudgetStatus::InRange)
        && obs.tick < u64::from(obs.spec.time_limits.reference)
        && !obs.changelog.is_empty()
        && jobs_since_improvement(obs.changelog) >= STAFF_UP_AFTER
    {
        actions.push(Action::SpawnAgent { role: Role::PG });
        actions.push(Action::SendMessage {
            to: Recipient::Broadcast,
            body: format!("Progress has slowed. Adding a programmer.\n{}", prohibited_line(obs)),
        });
    }
    actions
}

impl RolePolicy for PmPolicy {
    fn role(&self) -> Role {
        Role::PM
    }

    fn step(&self, obs: &Observations, _inbox: &[Message]) -> Vec<Action> {
        pm_step(self, obs)
    }

    fn commit(&mut self, _obs: &Observations, actions: &[Action]) {
        if actions.iter().any(|a| matches!(a, Action::SendMessage { body, .. } if body.starts_with("Budget caution"))) {
            self.cautioned = true;
        }
    }
}
