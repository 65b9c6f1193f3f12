//! Bundled reference inputs.

use std::collections::BTreeMap;

use rust_decimal::Decimal;

use crate::agents::{Mode, Role, LAUNCHER};
use crate::bus::{Message, Recipient};
use crate::exec::{compute_points, lint_files, JobOutcome, JobOutputs, JobRecord, LIBRARY_LABEL};
use crate::requirements::parse_requirements;
use crate::roles::codegen::candidate_sources;
use crate::telemetry::{Clock, EventBody, EventLog, Phase, Tick, SYSTEM};
use crate::tuning::{CandidateStatus, CandidateVersion, Metrics, Params, Snapshot, Version};

/// The case-study requirements document.
pub const SAMPLE_REQUIREMENTS: &str = include_str!("../fixtures/requirement_definition.md");

/// Naive triple-loop GEMM in C, the tuning starting point.
pub const NAIVE_GEMM_C: &str = include_str!("../fixtures/gemm_naive.c");

/// Recorded version history of the case-study multi-agent run, as an event log.
pub const HISTORY_EVENTS: &str = include_str!("../fixtures/history.events.log");

/// One row of the recorded history: version, author, label, GFLOPS and the
/// efficiency as printed, status.
pub const HISTORY_ROWS: [(&str, &str, &str, Option<(f64, f64)>, CandidateStatus); 7] = [
    ("1.0.0", "PG1.1", "Baseline", Some((1803.7, 23.10)), CandidateStatus::Valid),
    ("1.0.1", "PG1.1", "Warp optimization", Some((1888.5, 24.21)), CandidateStatus::Valid),
    ("1.2.1", "PG1.2", "Register blocking", Some((2185.2, 28.02)), CandidateStatus::Valid),
    ("1.3.0", "PG1.1", LIBRARY_LABEL, Some((5868.9, 75.24)), CandidateStatus::Invalid),
    ("1.4.0", "PG1.2", "Double buffering", Some((3365.2, 43.14)), CandidateStatus::Valid),
    ("1.5.0", "PG1.3", "Bigger tiling sizes", None, CandidateStatus::Failed),
    ("1.5.1", "PG1.1", "Boundary condition", None, CandidateStatus::Pending),
];

struct Recorder {
    log: EventLog,
    context: BTreeMap<String, u64>,
    messages: u64,
}

impl Recorder {
    fn push(&mut self, tick: Tick, agent: &str, body: EventBody) {
        self.log.append(tick, agent, body).expect("in-memory log");
    }

    fn tokens(&mut self, tick: Tick, agent: &str, delta: u64) {
        let total = self.context.entry(agent.to_string()).or_default();
        *total += delta;
        let total = *total;
        self.push(tick, agent, EventBody::TokenUsage { delta, total });
    }

    fn compact(&mut self, tick: Tick, agent: &str, after: u64) {
        let before = self.context.insert(agent.to_string(), after).unwrap_or_default();
        let summary = "Summary of earlier work kept after compaction.".to_string();
        self.push(tick, agent, EventBody::Compaction { tokens_before: before, tokens_after: after, lossy: false, summary });
    }

    fn say(&mut self, tick: Tick, from: &str, role: Role, to: Recipient, body: &str) {
        self.messages += 1;
        let message = Message {
            id: self.messages,
            sender: from.to_string(),
            recipient: to,
            role_tag: format!("[{role}]"),
            body: body.to_string(),
            tick,
        };
        self.push(tick, from, EventBody::MessageSent { message });
    }

    fn spawn(&mut self, tick: Tick, agent: &str, role: Role, by: &str) {
        self.push(tick, agent, EventBody::Spawn { role, requester: by.to_string(), compact_threshold: 150_000 });
    }
}

fn tiles(bm: u32, bn: u32, bk: u32) -> Params {
    [("BLOCK_M", bm), ("BLOCK_N", bn), ("BLOCK_K", bk), ("THREAD_M", 4), ("THREAD_N", 4)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Builds the recorded multi-agent run behind [`HISTORY_EVENTS`]. The bundled
/// file is this log serialized with a zero clock.
pub fn history_log() -> EventLog {
    let spec = parse_requirements(SAMPLE_REQUIREMENTS).expect("bundled requirements parse");
    let rate = spec.point_rate;
    let mut r = Recorder { log: EventLog::in_memory().with_clock(Clock::Fixed(0.0)), context: BTreeMap::new(), messages: 0 };
    r.push(
        0,
        SYSTEM,
        EventBody::ProjectStarted {
            project: "gemm-case-study".into(),
            mode: Mode::Multi,
            seed: 0,
            scenario: "recorded".into(),
            backend: "remote".into(),
            budget: spec.budget.clone(),
            point_rate: rate,
            peak_gflops: spec.hardware.peak_gflops_per_gpu,
        },
    );
    r.push(0, SYSTEM, EventBody::PhaseChange { phase: Phase::Running, reason: None });
    r.spawn(0, "PM", Role::PM, LAUNCHER);
    r.tokens(0, "PM", 18_000);
    for (id, role) in [("SE1", Role::SE), ("PG1.1", Role::PG), ("PG1.2", Role::PG), ("CD", Role::CD)] {
        r.spawn(2, id, role, "PM");
    }
    r.push(3, "PM", EventBody::AccuracyTarget { tolerance: 1e-12 });
    r.say(3, "PM", Role::PM, Recipient::Broadcast, "Target accuracy: 1e-12\nProhibited: cuBLAS, MKL");
    r.tokens(3, "PM", 12_000);
    for id in ["SE1", "PG1.1", "PG1.2", "CD"] {
        r.tokens(4, id, 15_000);
    }

    // (row, register tick, tile params, job elapsed seconds)
    let plan: [(usize, Tick, Params, i64); 7] = [
        (0, 10, tiles(32, 32, 8), 301),
        (1, 28, tiles(32, 32, 16), 296),
        (2, 40, tiles(64, 64, 8), 288),
        (3, 52, Params::new(), 262),
        (4, 96, tiles(64, 64, 16), 276),
        (5, 118, tiles(128, 128, 32), 244),
        (6, 150, tiles(64, 64, 16), 0),
    ];
    let mut parent: BTreeMap<&str, Version> = BTreeMap::new();
    let mut spent = Decimal::ZERO;
    let mut jobs = 0u64;
    let mut valid_best: Option<(Version, f64, f64)> = None;
    for (job_id, (row, at, params, elapsed)) in plan.into_iter().enumerate() {
        let (ver, author, label, perf, status) = HISTORY_ROWS[row];
        let version = Version::parse(ver).expect("fixture version");

        if row == 4 {
            r.tokens(64, "PG1.1", 140_000);
            r.compact(65, "PG1.1", 20_000);
            r.tokens(66, "PM", 125_000);
            r.compact(70, "PM", 18_000);
            r.spawn(72, "PG1.3", Role::PG, "PM");
            r.say(72, "PM", Role::PM, Recipient::Broadcast, "Progress has slowed. Adding a programmer.\nProhibited: cuBLAS, MKL");
            r.tokens(74, "PG1.3", 15_000);
        }

        if row == 6 {
            let summary = "SOTA v1.4.0 3365.2 GFLOPS (43.14%)".to_string();
            r.push(140, "SE1", EventBody::Report { path: "reports/report.md".into(), summary });
            r.tokens(140, "SE1", 6_000);
        }

        let mut candidate = CandidateVersion {
            version: version.clone(),
            parent: parent.get(author).cloned(),
            params,
            source_ref: format!("candidates/v{ver}"),
            label: label.to_string(),
            author: author.to_string(),
            status: CandidateStatus::Pending,
            metrics: None,
            note: None,
        };
        r.push(at, author, EventBody::CandidateRegistered { snapshot: Snapshot { tick: at, candidate: candidate.clone() } });
        r.tokens(at, author, 8_000);
        let job = job_id as u64 + 1;
        r.push(
            at,
            author,
            EventBody::JobSubmitted { job, version: version.clone(), backend: "remote".into(), gpus: 4, resource_group: "gpu".into() },
        );
        if status == CandidateStatus::Pending {
            continue;
        }

        let done = at + 6;
        let elapsed_s = Decimal::from(elapsed);
        let points = compute_points(elapsed_s, 4, rate).expect("non-negative elapsed");
        let mut metrics = BTreeMap::new();
        let outcome = match perf {
            Some((g, _)) => {
                metrics.insert("gflops".to_string(), g);
                metrics.insert("error_norm".to_string(), 0.0);
                JobOutcome::Done
            }
            None => JobOutcome::Error("resource overflow: 65536 bytes of shared memory requested, limit 49152".into()),
        };
        let record = JobRecord {
            id: job,
            version: version.clone(),
            backend: "remote".into(),
            resource_group: "gpu".into(),
            gpus: 4,
            submitted: at,
            started: at + 1,
            ended: done,
            elapsed_s,
            points,
            outcome: outcome.clone(),
            outputs: JobOutputs { stdout_ref: None, stderr_ref: None, metrics },
        };
        r.push(done, SYSTEM, EventBody::JobDone { record });
        spent += points;
        jobs += 1;
        let budget_status = crate::exec::status_for(spent, &spec.budget);
        r.push(done, SYSTEM, EventBody::BudgetUpdate { spent_points: spent, job_count: jobs, status: budget_status });

        let recorded = done + 1;
        candidate.status = if status == CandidateStatus::Invalid { CandidateStatus::Valid } else { status };
        candidate.metrics = perf.map(|(gflops, efficiency_pct)| Metrics {
            gflops,
            efficiency_pct,
            error_norm: 0.0,
            elapsed_s,
            gpus: 4,
        });
        if let JobOutcome::Error(e) = &outcome {
            candidate.note = Some(e.clone());
        }
        r.push(recorded, author, EventBody::ResultRecorded { snapshot: Snapshot { tick: recorded, candidate: candidate.clone() } });
        r.tokens(recorded, author, 4_000);
        if candidate.status == CandidateStatus::Valid {
            parent.insert(author, version.clone());
        }

        if status == CandidateStatus::Invalid {
            let lint = lint_files(&candidate_sources(label, &candidate.params), &spec.forbidden_libraries);
            r.push(recorded + 1, "CD", EventBody::Violation { version: version.clone(), lint, anonymization: Vec::new() });
            r.say(
                recorded + 1,
                "CD",
                Role::CD,
                Recipient::Agent("PM".into()),
                &format!("Warning: cuBLAS usage detected in v{ver}! It is prohibited by the requirements."),
            );
            candidate.status = CandidateStatus::Invalid;
            candidate.note = Some("uses a prohibited library".into());
            r.push(recorded + 2, "PM", EventBody::ResultRecorded { snapshot: Snapshot { tick: recorded + 2, candidate } });
            r.say(
                recorded + 2,
                "PM",
                Role::PM,
                Recipient::Broadcast,
                &format!("Emergency stop! v{ver} uses a prohibited library. Please exclude it from the graph.\nProhibited: cuBLAS, MKL"),
            );
            let (bv, bg, be) = valid_best.clone().expect("a valid result precedes the violation");
            r.say(
                recorded + 3,
                "SE1",
                Role::SE,
                Recipient::Agent("PM".into()),
                &format!("Excluded the flagged version from the graph. The valid highest performance is {be:.2}% (v{bv}, {bg:.1} GFLOPS)."),
            );
            r.tokens(recorded + 3, "SE1", 3_000);
        } else if let (CandidateStatus::Valid, Some((g, e))) = (status, perf) {
            r.push(recorded + 1, "CD", EventBody::Review { version: version.clone(), clean: true });
            if valid_best.as_ref().is_none_or(|b| g > b.1) {
                valid_best = Some((version.clone(), g, e));
                r.say(recorded + 1, "SE1", Role::SE, Recipient::Agent("PM".into()), &format!("SOTA update: v{ver} {g:.1} GFLOPS ({e:.2}%)."));
                r.push(recorded + 2, "CD", EventBody::Published { version: version.clone(), path: format!("publish/v{ver}") });
            }
        }
    }

    let reason = "time limit reached".to_string();
    r.say(180, "PM", Role::PM, Recipient::Broadcast, "Stopping the project: time limit reached. Final SOTA: v1.4.0 at 3365.2 GFLOPS (43.14%).");
    r.push(180, "PM", EventBody::PhaseChange { phase: Phase::Terminating, reason: Some(reason.clone()) });
    for id in ["CD", "PG1.1", "PG1.2", "PG1.3", "PM", "SE1"] {
        r.push(180, id, EventBody::Terminate { reason: reason.clone() });
    }
    r.push(180, "PM", EventBody::PhaseChange { phase: Phase::Terminated, reason: Some(reason) });
    r.log
}

/// [`history_log`] as JSON lines.
pub fn history_text() -> String {
    history_log()
        .events()
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_log_matches_builder() {
        let built = history_text();
        if std::env::var_os("VIBEHPC_REGEN_FIXTURES").is_some() {
            std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/history.events.log"), &built).unwrap();
            return;
        }
        assert_eq!(HISTORY_EVENTS, built, "rerun with VIBEHPC_REGEN_FIXTURES=1 to refresh the bundled log");
    }

    #[test]
    fn bundled_log_ticks_never_decrease() {
        let log = history_log();
        assert!(log.events().windows(2).all(|w| w[0].tick <= w[1].tick));
    }
}
