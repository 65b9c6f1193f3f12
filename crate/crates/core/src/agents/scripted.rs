use serde::{Deserialize, Serialize};

use super::{Action, Brain, CompactionPolicy, Decision, Observations};
use crate::bus::Message;
use crate::roles::RolePolicy;

/// Fixed token charge per action kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenCosts {
    /// Charged on every decision, reading context and observations.
    pub base: u64,
    pub per_inbox_message: u64,
    pub send_message: u64,
    pub generate_candidate: u64,
    pub submit_job: u64,
    pub record_result: u64,
    pub review_candidate: u64,
    pub publish: u64,
    pub set_accuracy_target: u64,
    pub spawn_agent: u64,
    pub mark_invalid: u64,
    pub emit_report: u64,
    pub terminate: u64,
}

impl Default for TokenCosts {
    fn default() -> Self {
        Self {
            base: 1500,
            per_inbox_message: 150,
            send_message: 300,
            generate_candidate: 8000,
            submit_job: 500,
            record_result: 1000,
            review_candidate: 2000,
            publish: 600,
            set_accuracy_target: 300,
            spawn_agent: 400,
            mark_invalid: 300,
            emit_report: 2500,
            terminate: 200,
        }
    }
}

impl TokenCosts {
    pub fn of(&self, action: &Action) -> u64 {
        match action {
            Action::SendMessage { .. } => self.send_message,
            Action::GenerateCandidate { .. } => self.generate_candidate,
            Action::SubmitJob { .. } => self.submit_job,
            Action::RecordResult { .. } => self.record_result,
            Action::ReviewCandidate { .. } => self.review_candidate,
            Action::Publish { .. } => self.publish,
            Action::SetAccuracyTarget { .. } => self.set_accuracy_target,
            Action::SpawnAgent { .. } => self.spawn_agent,
            Action::MarkInvalid { .. } => self.mark_invalid,
            Action::EmitReport => self.emit_report,
            Action::Terminate { .. } => self.terminate,
            Action::NoOp => 0,
        }
    }

    pub fn charge(&self, inbox: usize, actions: &[Action]) -> u64 {
        self.base + self.per_inbox_message * inbox as u64 + actions.iter().map(|a| self.of(a)).sum::<u64>()
    }
}

/// Deterministic brain driven by a role decision table.
pub struct ScriptedBrain {
    policy: Box<dyn RolePolicy>,
    costs: TokenCosts,
    compaction: CompactionPolicy,
}

impl ScriptedBrain {
    pub fn new(policy: Box<dyn RolePolicy>, costs: TokenCosts, compaction: CompactionPolicy) -> Self {
        Self { policy, costs, compaction }
    }
}

impl Brain for ScriptedBrain {
    fn decide(&mut self, _context: &str, inbox: &[Message], obs: &Observations) -> Decision {
        let mut actions = self.policy.step(obs, inbox);
        self.policy.commit(obs, &actions);
        if actions.is_empty() {
            actions.push(Action::NoOp);
        }
        let tokens = self.costs.charge(inbox.len(), &actions);
        Decision { actions, tokens, error: None }
    }

    fn compaction_policy(&self) -> CompactionPolicy {
        self.compaction
    }

    fn wants_turn(&self, obs: &Observations) -> bool {
        !self.policy.step(obs, &[]).is_empty()
    }
}
