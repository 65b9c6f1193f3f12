use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rust_decimal::Decimal;
use vibehpc_core::agents::{Mode, Role};
use vibehpc_core::exec::{lint_files, PerfModel, SimulatedBackend, BudgetStatus};
use vibehpc_core::fixtures::SAMPLE_REQUIREMENTS;
use vibehpc_core::orchestrator::{Orchestrator, RunConfig, RunSummary};
use vibehpc_core::requirements::parse_requirements;
use vibehpc_core::roles::codegen::candidate_sources;
use vibehpc_core::roles::Scenario;
use vibehpc_core::telemetry::{replay, EventBody, TelemetryEvent, SYSTEM};
use vibehpc_core::tuning::{CandidateStatus, ChangeLog, Version};

fn run(mode: Mode, scenario: &str, seed: u64, max_points: Option<i64>) -> (RunSummary, Orchestrator) {
    let mut spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
    if let Some(max) = max_points {
        spec.budget.max_points = Decimal::from(max);
        spec.budget.reference_points = spec.budget.reference_points.min(spec.budget.max_points);
        spec.budget.min_points = spec.budget.min_points.min(spec.budget.max_points);
    }
    let mut cfg = RunConfig::new("prop", mode, seed);
    cfg.scenario = Scenario::named(scenario).unwrap();
    cfg.max_ticks = 400;
    let backend = Box::new(SimulatedBackend::new(PerfModel::case_study(), seed));
    let mut o = Orchestrator::new(cfg, spec, backend, None).unwrap();
    let s = o.run().unwrap();
    (s, o)
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Solo), Just(Mode::Multi)]
}

fn scenario() -> impl Strategy<Value = &'static str> {
    prop::sample::select(Scenario::NAMES.to_vec())
}

fn snapshots(events: &[TelemetryEvent]) -> Vec<(String, vibehpc_core::tuning::Snapshot)> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::CandidateRegistered { snapshot } | EventBody::ResultRecorded { snapshot } => {
                Some((e.agent.clone(), snapshot.clone()))
            }
            _ => None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replayed_state_equals_live_state(m in mode(), sc in scenario(), seed in 0u64..1000) {
        let (summary, o) = run(m, sc, seed, None);
        let state = replay(o.events()).unwrap();
        prop_assert_eq!(state.changelog.current(), o.changelog().current());
        prop_assert_eq!(state.changelog.sota(), o.changelog().sota());
        prop_assert_eq!(state.ledger.spent_points, summary.spent_points);
        prop_assert_eq!(state.ledger.job_count, summary.jobs);
        let published: BTreeSet<Version> = state.published.iter().cloned().collect();
        prop_assert_eq!(&published, o.published());
        prop_assert_eq!(state.agents.len(), o.registry().len());
        for a in o.registry().all() {
            let snap = &state.agents[&a.id];
            prop_assert_eq!(snap.context_tokens, a.context_tokens);
            prop_assert_eq!(snap.cumulative_tokens, a.cumulative_tokens);
            prop_assert_eq!(snap.compactions as usize, a.compactions.len());
        }
    }

    #[test]
    fn ledger_is_the_exact_sum_of_jobs(m in mode(), seed in 0u64..1000, max in 0i64..200) {
        let (summary, o) = run(m, "baseline", seed, Some(max));
        let mut sum = Decimal::ZERO;
        let mut count = 0u64;
        let mut exceeded = false;
        for e in o.events() {
            match &e.body {
                EventBody::JobDone { record } => {
                    sum += record.points;
                    count += 1;
                }
                EventBody::BudgetUpdate { spent_points, job_count, status } => {
                    prop_assert_eq!(*spent_points, sum);
                    prop_assert_eq!(*job_count, count);
                    exceeded |= *status == BudgetStatus::Exceeded;
                }
                EventBody::JobSubmitted { .. } => prop_assert!(!exceeded, "submission after the budget was exceeded"),
                _ => {}
            }
        }
        prop_assert_eq!(summary.spent_points, sum);
        prop_assert_eq!(summary.exit_code == 2, exceeded);
    }

    #[test]
    fn token_series_only_drop_at_compactions(m in mode(), sc in scenario(), seed in 0u64..1000) {
        let (_, o) = run(m, sc, seed, None);
        let mut last: BTreeMap<&str, u64> = BTreeMap::new();
        let mut terminated: BTreeSet<&str> = BTreeSet::new();
        for e in o.events() {
            match &e.body {
                EventBody::TokenUsage { total, .. } => {
                    prop_assert!(!terminated.contains(e.agent.as_str()), "{} ran after termination", e.agent);
                    let prev = last.insert(&e.agent, *total).unwrap_or(0);
                    prop_assert!(*total >= prev);
                }
                EventBody::Compaction { tokens_after, .. } => {
                    prop_assert!(*tokens_after < o.registry().get(&e.agent).unwrap().compact_threshold);
                    last.insert(&e.agent, *tokens_after);
                }
                EventBody::Terminate { .. } => {
                    terminated.insert(&e.agent);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn multi_never_publishes_prohibited_code(sc in scenario(), seed in 0u64..1000) {
        let (summary, o) = run(Mode::Multi, sc, seed, None);
        let spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
        for v in o.published() {
            let c = o.changelog().get(v).unwrap();
            prop_assert!(lint_files(&candidate_sources(&c.label, &c.params), &spec.forbidden_libraries).is_empty());
        }
        if let Some((v, _, _)) = summary.sota {
            let c = o.changelog().get(&v).unwrap();
            prop_assert!(lint_files(&candidate_sources(&c.label, &c.params), &spec.forbidden_libraries).is_empty());
        }
    }

    #[test]
    fn only_the_manager_invalidates_and_changes_phase(sc in scenario(), seed in 0u64..1000) {
        let (_, o) = run(Mode::Multi, sc, seed, None);
        for e in o.events() {
            match &e.body {
                EventBody::ResultRecorded { snapshot } if snapshot.candidate.status == CandidateStatus::Invalid => {
                    prop_assert_eq!(&e.agent, "PM");
                }
                EventBody::PhaseChange { .. } => prop_assert!(e.agent == "PM" || e.agent == SYSTEM, "{}", e.agent),
                _ => {}
            }
        }
    }

    #[test]
    fn sota_falls_only_on_invalidation(m in mode(), sc in scenario(), seed in 0u64..1000) {
        let (_, o) = run(m, sc, seed, None);
        let mut log = ChangeLog::new();
        let mut prev: Option<(Version, f64)> = None;
        for (_, snap) in snapshots(o.events()) {
            let invalidates_sota =
                snap.candidate.status == CandidateStatus::Invalid && prev.as_ref().is_some_and(|p| p.0 == snap.candidate.version);
            log.apply(snap).unwrap();
            let now = log.sota();
            if !invalidates_sota {
                let before = prev.as_ref().map_or(0.0, |p| p.1);
                prop_assert!(now.as_ref().map_or(0.0, |n| n.1) >= before);
            }
            prev = now;
        }
    }

    #[test]
    fn simulated_results_follow_the_model(m in mode(), seed in 0u64..1000) {
        let (_, o) = run(m, "violation-demo", seed, None);
        let model = PerfModel::case_study();
        for e in o.events() {
            if let EventBody::JobDone { record } = &e.body {
                let c = o.changelog().get(&record.version).unwrap();
                match (record.outputs.metrics.get("gflops"), model.gflops(&c.label, &c.params)) {
                    (Some(g), Ok(expected)) => prop_assert_eq!(*g, expected),
                    (None, Err(_)) => {}
                    (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
                }
            }
        }
    }

    #[test]
    fn spawns_match_the_activity_table(m in mode(), sc in scenario(), seed in 0u64..1000) {
        let (_, o) = run(m, sc, seed, None);
        let spawns = o.events().iter().filter(|e| e.body.kind() == "Spawn").count();
        prop_assert_eq!(spawns, o.registry().len());
        let roster = parse_requirements(SAMPLE_REQUIREMENTS).unwrap().agent_roster;
        for role in [Role::PM, Role::SE, Role::PG, Role::CD] {
            let n = o.registry().all().filter(|a| a.role == role).count() as u32;
            match m {
                Mode::Solo => prop_assert_eq!(n, u32::from(role == Role::PG)),
                Mode::Multi => prop_assert!(n <= roster.count(role)),
            }
        }
    }
}

/// Removes whole heading blocks and compares `missing_items` with a list
/// built from the headings that survive.
fn drop_blocks(doc: &str, mask: u64) -> String {
    let mut out = String::new();
    let mut block = 0usize;
    let mut keep = true;
    for line in doc.lines() {
        if line.starts_with('#') {
            block += 1;
            keep = mask >> (block % 64) & 1 == 0;
        }
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn missing_by_headings(doc: &str) -> Vec<String> {
    let headings: Vec<String> =
        doc.lines()
            .filter(|l| l.starts_with('#'))
            .map(|l| {
                let words: String = l.to_lowercase().chars().map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
                format!(" {} ", words.split_whitespace().collect::<Vec<_>>().join(" "))
            })
            .collect();
    let table: [(&str, &str); 8] = [
        ("Project Information", "project information"),
        ("Computational Resource Budget", "computational resource budget"),
        ("Subsystem Rate", "rate"),
        ("Time Limit", "time limit"),
        ("Agent Configuration", "agent configuration"),
        ("Accuracy Requirements", "accuracy requirements"),
        ("Available Hardware", "available hardware"),
        ("Peak Performance", "peak performance"),
    ];
    table
        .iter()
        .filter(|(_, needle)| !headings.iter().any(|h| h.contains(&format!(" {needle} "))))
        .map(|(name, _)| name.to_string())
        .collect()
}

proptest! {
    #[test]
    fn missing_sections_are_reported_exactly(mask in any::<u64>()) {
        let doc = drop_blocks(SAMPLE_REQUIREMENTS, mask & !1);
        if let Ok(spec) = parse_requirements(&doc) {
            prop_assert_eq!(spec.missing_items, missing_by_headings(&doc));
        }
    }
}
