use std::collections::BTreeSet;

use super::{codegen, record_actions, RolePolicy, SHORTCUT_LIBRARY};
use crate::agents::{Action, Observations, Role, StopReason, TerminateScope};
use crate::bus::Message;
use crate::exec::{LABEL_LADDER, LIBRARY_LABEL};
use crate::telemetry::{Phase, Tick};
use crate::tuning::{next_params, CandidateStatus, CandidateVersion, ChangeLog, ParamSpace, Params, TuningError, Version};

/// Rejections worth retrying once capacity frees up.
pub(crate) const RETRY_PREFIX: &str = "in-flight limit";

/// What a PG intends to generate next.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub version: Version,
    pub parent: Option<Version>,
    pub label: String,
    pub params: Params,
}

fn registered_at(log: &ChangeLog, v: &Version) -> Tick {
    log.entries().iter().find(|s| &s.candidate.version == v).map_or(0, |s| s.tick)
}

fn mine<'a>(obs: &Observations<'a>) -> Vec<&'a CandidateVersion> {
    obs.changelog.current().into_iter().filter(|c| c.author == obs.me.id).collect()
}

/// Halves the largest block dimension that has a smaller legal value.
pub fn reduce_tiles(params: &Params, space: &ParamSpace) -> Option<Params> {
    let mut dims: Vec<(&str, u32)> = ["BLOCK_M", "BLOCK_N", "BLOCK_K"]
        .into_iter()
        .filter_map(|d| params.get(d).map(|v| (d, *v)))
        .collect();
    dims.sort_by(|a, b| b.1.cmp(&a.1));
    for (name, v) in dims {
        let legal = space.dims.iter().find(|d| d.name == name).is_some_and(|d| d.values.contains(&(v / 2)));
        if legal {
            let mut out = params.clone();
            out.insert(name.to_string(), v / 2);
            return Some(out);
        }
    }
    None
}

fn next_patch(log: &ChangeLog, minor: u32) -> u32 {
    log.current()
        .iter()
        .filter(|c| c.version.major == 1 && c.version.minor == minor)
        .map(|c| c.version.patch + 1)
        .max()
        .unwrap_or(0)
}

fn is_library(c: &CandidateVersion) -> bool {
    c.label == LIBRARY_LABEL
}

/// Chooses the next candidate: the library shortcut when planted or no
/// longer remembered as prohibited, a tile reduction after an overflow, the
/// parent's tiles for the first try of a new idea, or the next search point.
pub fn next_candidate(obs: &Observations) -> Result<Plan, TuningError> {
    let log = obs.changelog;
    let mine = mine(obs);
    let own: Vec<&&CandidateVersion> = mine.iter().filter(|c| !is_library(c)).collect();
    let level = own.len() / obs.policy.trials_per_level.max(1);
    let parent = mine
        .iter()
        .rev()
        .find(|c| c.status == CandidateStatus::Valid)
        .map(|c| c.version.clone())
        .or_else(|| log.sota().map(|s| s.0));

    let planted = obs.scenario.plant.as_ref().is_some_and(|(a, n)| *a == obs.me.id && mine.len() + 1 == *n);
    let since = obs.me.compactions.last().map_or(0, |c| c.tick);
    let tried = mine.iter().any(|c| is_library(c) && registered_at(log, &c.version) >= since);
    let forgot = !obs.me.memory.forbids(SHORTCUT_LIBRARY) && !tried;
    if planted || forgot {
        let minor = level.min(LABEL_LADDER.len() - 1) as u32;
        return Ok(Plan {
            version: Version::new(1, minor, next_patch(log, minor)),
            parent,
            label: LIBRARY_LABEL.to_string(),
            params: Params::new(),
        });
    }

    let label = if level < LABEL_LADDER.len() {
        LABEL_LADDER[level].to_string()
    } else {
        log.current()
            .into_iter()
            .filter(|c| c.status == CandidateStatus::Valid && !is_library(c))
            .filter_map(|c| c.metrics.as_ref().map(|m| (m.gflops, c.label.clone())))
            .fold(None::<(f64, String)>, |best, (g, l)| match best {
                Some((bg, _)) if bg >= g => best,
                _ => Some((g, l)),
            })
            .map_or_else(|| LABEL_LADDER[0].to_string(), |(_, l)| l)
    };
    let minor = LABEL_LADDER.iter().position(|l| *l == label).unwrap_or(0) as u32;

    let overflowed = own
        .last()
        .filter(|c| c.status == CandidateStatus::Failed && c.note.as_deref().is_some_and(|n| n.contains("resource overflow")));
    let reduced = overflowed.and_then(|c| reduce_tiles(&c.params, obs.space));
    let carried = parent
        .as_ref()
        .and_then(|v| log.get(v))
        .filter(|p| own.len() % obs.policy.trials_per_level.max(1) == 0 && obs.space.index_of(&p.params).is_some())
        .map(|p| p.params.clone());
    let params = match reduced.or(carried) {
        Some(p) => p,
        None => next_params(obs.strategy.build().as_ref(), obs.space, log, obs.seed)?,
    };
    Ok(Plan { version: Version::new(1, minor, next_patch(log, minor)), parent, label, params })
}

/// Record fresh results, then keep one job of our own in flight.
pub fn pg_step(obs: &Observations) -> Vec<Action> {
    let mut actions = record_actions(obs);
    let finished: BTreeSet<&Version> = obs.finished_jobs.iter().map(|j| &j.version).collect();
    for (v, why) in obs.rejected {
        if !why.starts_with(RETRY_PREFIX) && obs.changelog.get(v).is_some_and(|c| c.status == CandidateStatus::Pending) {
            actions.push(Action::RecordResult {
                version: v.clone(),
                verdict: CandidateStatus::Failed,
                note: Some(format!("submission rejected: {why}")),
            });
        }
    }
    if obs.phase != Phase::Running || obs.ledger.spent_points >= obs.spec.budget.max_points {
        return actions;
    }
    if obs.inflight_total >= obs.policy.max_inflight || !obs.my_inflight.is_empty() {
        return actions;
    }
    let hard_rejected: BTreeSet<&Version> =
        obs.rejected.iter().filter(|(_, why)| !why.starts_with(RETRY_PREFIX)).map(|(v, _)| v).collect();
    let waiting = mine(obs).into_iter().find(|c| {
        c.status == CandidateStatus::Pending && !finished.contains(&c.version) && !hard_rejected.contains(&c.version)
    });
    if let Some(c) = waiting {
        actions.push(Action::SubmitJob { version: c.version.clone() });
        return actions;
    }
    match next_candidate(obs) {
        Ok(plan) => {
            let sources = codegen::candidate_sources(&plan.label, &plan.params);
            let version = plan.version.clone();
            actions.push(Action::GenerateCandidate {
                version: plan.version,
                parent: plan.parent,
                label: plan.label,
                params: plan.params,
                sources,
            });
            actions.push(Action::SubmitJob { version });
        }
        Err(_) => actions.push(Action::Terminate { scope: TerminateScope::SelfOnly, reason: StopReason::SpaceExhausted }),
    }
    actions
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PgPolicy;

impl RolePolicy for PgPolicy {
    fn role(&self) -> Role {
        Role::PG
    }

    fn step(&self, obs: &Observations, _inbox: &[Message]) -> Vec<Action> {
        pg_step(obs)
    }
}

#[cfg(test)]
mod tests {
    use rust_decimal::Decimal;

    use super::*;
    use crate::exec::{JobOutcome, JobOutputs, JobRecord};
    use crate::roles::testing::Fixture;

    fn job(v: &Version, outcome: JobOutcome, metrics: &[(&str, f64)]) -> JobRecord {
        JobRecord {
            id: 1,
            version: v.clone(),
            backend: "simulated".into(),
            resource_group: "g".into(),
            gpus: 4,
            submitted: 0,
            started: 1,
            ended: 5,
            elapsed_s: Decimal::from(243),
            points: Decimal::ONE,
            outcome,
            outputs: JobOutputs {
                metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn idle_pg_generates_and_submits() {
        let fx = Fixture::new();
        let actions = pg_step(&fx.observations("PG1.1"));
        let [Action::GenerateCandidate { version, label, params, .. }, Action::SubmitJob { version: sub }] = &actions[..]
        else {
            panic!("{actions:?}")
        };
        assert_eq!(version.to_string(), "1.0.0");
        assert_eq!(label, "Baseline");
        assert_eq!(sub, version);
        assert!(fx.space.index_of(params).is_some());
    }

    #[test]
    fn result_becomes_changelog_record() {
        let mut fx = Fixture::new();
        let v = Version::new(1, 0, 0);
        fx.changelog.register_candidate(1, v.clone(), None, Params::new(), "", "Baseline", "PG1.1").unwrap();
        fx.finished.push(job(&v, JobOutcome::Done, &[("gflops", 1803.7), ("error_norm", 1e-16)]));
        fx.my_inflight.push(Version::new(9, 9, 9));
        let actions = pg_step(&fx.observations("PG1.1"));
        assert_eq!(actions, vec![Action::RecordResult { version: v, verdict: CandidateStatus::Valid, note: None }]);
    }

    #[test]
    fn overflow_leads_to_smaller_tiles() {
        let mut fx = Fixture::new();
        let v = Version::new(1, 0, 0);
        let big: Params = [("BLOCK_M", 128), ("BLOCK_N", 128), ("BLOCK_K", 16), ("THREAD_M", 4), ("THREAD_N", 4)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        fx.changelog.register_candidate(1, v.clone(), None, big.clone(), "", "Baseline", "PG1.1").unwrap();
        fx.changelog
            .record_result(
                2,
                &v,
                None,
                CandidateStatus::Failed,
                Some("resource overflow: 65536 bytes of shared memory exceeds 49152".into()),
            )
            .unwrap();
        let plan = next_candidate(&fx.observations("PG1.1")).unwrap();
        assert_eq!(plan.params["BLOCK_M"], 64);
        assert_eq!(plan.params["BLOCK_N"], 128);
        let m = crate::exec::PerfModel::case_study();
        assert!(m.smem_footprint(&plan.params) <= m.smem_limit_bytes);
    }

    #[test]
    fn forgotten_prohibition_tempts_once() {
        let mut fx = Fixture::new();
        fx.registry.get_mut("PG1.1").unwrap().memory.prohibitions.clear();
        let plan = next_candidate(&fx.observations("PG1.1")).unwrap();
        assert_eq!(plan.label, LIBRARY_LABEL);
        fx.changelog.register_candidate(1, plan.version, None, Params::new(), "", LIBRARY_LABEL, "PG1.1").unwrap();
        assert_ne!(next_candidate(&fx.observations("PG1.1")).unwrap().label, LIBRARY_LABEL);
        assert_ne!(next_candidate(&fx.observations("PG1.2")).unwrap().label, LIBRARY_LABEL);
    }

    #[test]
    fn versions_do_not_collide_between_pgs() {
        let mut fx = Fixture::new();
        let a = next_candidate(&fx.observations("PG1.1")).unwrap();
        fx.changelog.register_candidate(1, a.version.clone(), None, a.params, "", a.label, "PG1.1").unwrap();
        let b = next_candidate(&fx.observations("PG1.2")).unwrap();
        assert_eq!(b.version.to_string(), "1.0.1");
    }

    #[test]
    fn full_pipeline_waits() {
        let mut fx = Fixture::new();
        fx.inflight_total = 2;
        assert!(pg_step(&fx.observations("PG1.1")).is_empty());
    }
}
