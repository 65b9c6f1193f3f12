use std::collections::BTreeSet;

use super::{sota_status, RolePolicy};
use crate::agents::{Action, Observations, Role};
use crate::bus::{Message, Recipient};
use crate::telemetry::Tick;
use crate::tuning::{CandidateStatus, Version};

#[derive(Debug, Clone, Default)]
pub struct SePolicy {
    pub last_report: Option<Tick>,
    pub known_sota: Option<Version>,
    pub flagged: BTreeSet<Version>,
}

fn to_pm(body: String) -> Action {
    Action::SendMessage { to: Recipient::Agent("PM".into()), body }
}

fn valid_highest(obs: &Observations) -> String {
    match sota_status(obs) {
        Some((v, g, eff)) => format!("The valid highest performance is {eff:.2}% (v{v}, {g:.1} GFLOPS)."),
        None => "No valid result remains.".into(),
    }
}

/// Watch the SOTA, answer exclusions, flag inconsistent records and emit
/// periodic reports.
pub fn se_step(state: &SePolicy, obs: &Observations, inbox: &[Message]) -> Vec<Action> {
    let mut actions = Vec::new();
    let sota = obs.changelog.sota().map(|s| s.0);
    if inbox.iter().any(|m| m.body.contains("Emergency stop")) {
        actions.push(to_pm(format!("Excluded the flagged version from the graph. {}", valid_highest(obs))));
    } else if sota != state.known_sota {
        let previous = state.known_sota.as_ref().and_then(|v| obs.changelog.get(v));
        let body = match (sota_status(obs), previous) {
            (Some(_), Some(p)) if p.status == CandidateStatus::Invalid => valid_highest(obs),
            (Some((v, g, eff)), Some(p)) => format!("SOTA update: v{v} {g:.1} GFLOPS ({eff:.2}%) beats v{}.", p.version),
            (Some((v, g, eff)), None) => format!("SOTA update: v{v} {g:.1} GFLOPS ({eff:.2}%) is the first valid result."),
            (None, _) => valid_highest(obs),
        };
        actions.push(to_pm(body));
    }
    for c in obs.changelog.current() {
        if c.status == CandidateStatus::Valid && c.metrics.is_none() && !state.flagged.contains(&c.version) {
            actions.push(to_pm(format!("Discrepancy: v{} is marked valid without metrics.", c.version)));
        }
    }
    let since = state.last_report.unwrap_or(obs.me.spawned_at);
    if obs.tick.saturating_sub(since) >= obs.policy.report_period {
        actions.push(Action::EmitReport);
    }
    actions
}

impl RolePolicy for SePolicy {
    fn role(&self) -> Role {
        Role::SE
    }

    fn step(&self, obs: &Observations, inbox: &[Message]) -> Vec<Action> {
        se_step(self, obs, inbox)
    }

    fn commit(&mut self, obs: &Observations, actions: &[Action]) {
        self.known_sota = obs.changelog.sota().map(|s| s.0);
        if actions.contains(&Action::EmitReport) {
            self.last_report = Some(obs.tick);
        }
        for c in obs.changelog.current() {
            if c.status == CandidateStatus::Valid && c.metrics.is_none() {
                self.flagged.insert(c.version.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rust_decimal::Decimal;

    use super::*;
    use crate::roles::testing::Fixture;
    use crate::tuning::{Metrics, Params};

    fn add(fx: &mut Fixture, v: &Version, g: f64) {
        fx.changelog.register_candidate(1, v.clone(), None, Params::new(), "", "x", "PG1.1").unwrap();
        let m = Metrics { gflops: g, efficiency_pct: g / 78.0, error_norm: 0.0, elapsed_s: Decimal::ONE, gpus: 4 };
        fx.changelog.record_result(2, v, Some(m), CandidateStatus::Valid, None).unwrap();
    }

    fn emergency() -> Message {
        Message {
            id: 1,
            sender: "PM".into(),
            recipient: Recipient::Broadcast,
            role_tag: "[PM]".into(),
            body: "Emergency stop!".into(),
            tick: 3,
        }
    }

    #[test]
    fn exclusion_reply_names_valid_best() {
        let mut fx = Fixture::new();
        let (a, b) = (Version::new(1, 2, 1), Version::new(1, 3, 0));
        add(&mut fx, &a, 2185.2);
        add(&mut fx, &b, 5868.9);
        fx.changelog.mark_invalid(3, &b, "prohibited").unwrap();
        let state = SePolicy { known_sota: Some(a), last_report: Some(1), ..Default::default() };
        let actions = se_step(&state, &fx.observations("SE1"), &[emergency()]);
        let [Action::SendMessage { body, .. }] = &actions[..] else { panic!("{actions:?}") };
        assert!(body.contains("The valid highest performance is 28.02%"), "{body}");
    }

    #[test]
    fn sota_change_is_reported_once() {
        let mut fx = Fixture::new();
        add(&mut fx, &Version::new(1, 0, 0), 1803.7);
        let mut state = SePolicy { last_report: Some(1), ..Default::default() };
        let obs = fx.observations("SE1");
        let actions = se_step(&state, &obs, &[]);
        assert_eq!(actions.len(), 1);
        state.commit(&obs, &actions);
        assert!(se_step(&state, &obs, &[]).is_empty());
    }

    #[test]
    fn report_every_period() {
        let mut fx = Fixture::new();
        fx.tick = 50;
        assert_eq!(se_step(&SePolicy::default(), &fx.observations("SE1"), &[]), vec![Action::EmitReport]);
        fx.tick = 49;
        assert!(se_step(&SePolicy::default(), &fx.observations("SE1"), &[]).is_empty());
    }
}
