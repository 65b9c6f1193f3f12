use std::collections::BTreeSet;

use super::RolePolicy;
use crate::agents::{Action, Observations, Role};
use crate::bus::{Message, Recipient};
use crate::exec::{lint_files, scan_anonymization};
use crate::tuning::CandidateStatus;

/// Review every recorded candidate once, warn the PM about prohibited
/// libraries, and publish a clean SOTA.
pub fn cd_step(obs: &Observations) -> Vec<Action> {
    let mut actions = Vec::new();
    let mut clean_now = BTreeSet::new();
    for c in obs.changelog.current() {
        if c.status == CandidateStatus::Pending || obs.reviews.contains_key(&c.version) {
            continue;
        }
        let Some(files) = obs.sources.get(&c.version) else { continue };
        let lint = lint_files(files, &obs.spec.forbidden_libraries);
        let anonymization = scan_anonymization(files, obs.user_ids);
        let mut libs: Vec<&str> = lint.iter().map(|h| h.library.as_str()).collect();
        libs.dedup();
        for lib in libs {
            actions.push(Action::SendMessage {
                to: Recipient::Agent("PM".into()),
                body: format!("Warning: {lib} usage detected in v{}! It is prohibited by the requirements.", c.version),
            });
        }
        if lint.is_empty() && anonymization.is_empty() {
            clean_now.insert(c.version.clone());
        }
        actions.push(Action::ReviewCandidate { version: c.version.clone(), lint, anonymization });
    }
    if obs.spec.publish.enabled {
        if let Some((v, _)) = obs.changelog.sota() {
            let clean = clean_now.contains(&v) || obs.reviews.get(&v) == Some(&true);
            if clean && !obs.published.contains(&v) {
                actions.push(Action::Publish { version: v });
            }
        }
    }
    actions
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CdPolicy;

impl RolePolicy for CdPolicy {
    fn role(&self) -> Role {
        Role::CD
    }

    fn step(&self, obs: &Observations, _inbox: &[Message]) -> Vec<Action> {
        cd_step(obs)
    }
}

#[cfg(test)]
mod tests {
    use rust_decimal::Decimal;

    use super::*;
    use crate::exec::LIBRARY_LABEL;
    use crate::roles::codegen::candidate_sources;
    use crate::roles::testing::Fixture;
    use crate::tuning::{Metrics, Params, Version};

    fn add(fx: &mut Fixture, v: Version, label: &str, g: f64) {
        fx.changelog.register_candidate(1, v.clone(), None, Params::new(), "", label, "PG1.1").unwrap();
        let m = Metrics { gflops: g, efficiency_pct: g / 78.0, error_norm: 0.0, elapsed_s: Decimal::ONE, gpus: 4 };
        fx.changelog.record_result(2, &v, Some(m), CandidateStatus::Valid, None).unwrap();
        fx.sources.insert(v, candidate_sources(label, &Params::new()));
    }

    #[test]
    fn library_candidate_is_reported_and_not_published() {
        let mut fx = Fixture::new();
        fx.spec.publish.enabled = true;
        add(&mut fx, Version::new(1, 2, 1), "Register blocking", 2185.2);
        add(&mut fx, Version::new(1, 3, 0), LIBRARY_LABEL, 5868.9);
        let actions = cd_step(&fx.observations("CD"));
        assert!(actions.contains(&Action::SendMessage {
            to: Recipient::Agent("PM".into()),
            body: "Warning: cuBLAS usage detected in v1.3.0! It is prohibited by the requirements.".into()
        }));
        assert_eq!(actions.iter().filter(|a| matches!(a, Action::ReviewCandidate { .. })).count(), 2);
        assert!(!actions.iter().any(|a| matches!(a, Action::Publish { .. })));
    }

    #[test]
    fn clean_sota_is_published_once() {
        let mut fx = Fixture::new();
        fx.spec.publish.enabled = true;
        add(&mut fx, Version::new(1, 2, 1), "Register blocking", 2185.2);
        let actions = cd_step(&fx.observations("CD"));
        assert!(actions.contains(&Action::Publish { version: Version::new(1, 2, 1) }));
        fx.reviews.insert(Version::new(1, 2, 1), true);
        fx.published.insert(Version::new(1, 2, 1));
        assert!(cd_step(&fx.observations("CD")).is_empty());
    }
}
