//! Headline checks, one line per criterion. Runs without the libtest
//! harness so the lines always show up in `cargo test` output.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use vibehpc_core::agents::{AgentMemory, AgentRegistry, CompactionPolicy, Mode, Requester, Role};
use vibehpc_core::exec::{
    accuracy_verdict, compute_points, gemm_naive, gemm_tiled, submit_simulated, verify_error_norm, AccuracyVerdict,
    BudgetLedger, BudgetStatus, JobOutcome, JobOutputs, JobRecord, JobRequest, PerfModel, TileShape,
    LIBRARY_LABEL,
};
use vibehpc_core::fixtures::{SAMPLE_REQUIREMENTS, HISTORY_ROWS};
use vibehpc_core::project::{audit_publish, cmd_init, cmd_replay, cmd_run, RunOutcome, RunOverrides};
use vibehpc_core::requirements::{parse_requirements, to_document, AgentRoster, Budget, TimeLimits};
use vibehpc_core::roles::verdict_for;
use vibehpc_core::telemetry::{masked_lines, read_log, replay, EventBody, EventLog, TelemetryEvent};
use vibehpc_core::tuning::{CandidateStatus, Params, Version};
use vibehpc_core::Matrix64;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn d(s: &str) -> Decimal {
    s.parse().unwrap()
}

fn requirements_round_trip() -> Check {
    let spec = parse_requirements(SAMPLE_REQUIREMENTS).map_err(|e| e.to_string())?;
    let budget = Budget { min_points: d("100"), reference_points: d("500"), max_points: d("1000") };
    ensure!(spec.budget == budget, "budget {:?}", spec.budget);
    ensure!(spec.point_rate == d("0.007"), "rate {}", spec.point_rate);
    ensure!(spec.time_limits == TimeLimits { min: 120, reference: 150, max: 180 }, "time {:?}", spec.time_limits);
    let roster = AgentRoster([(Role::PM, 1), (Role::SE, 1), (Role::PG, 3), (Role::CD, 1)].into_iter().collect());
    ensure!(spec.agent_roster == roster, "roster {:?}", spec.agent_roster);
    ensure!(spec.forbidden_libraries == ["cuBLAS", "MKL"], "forbidden {:?}", spec.forbidden_libraries);
    let again = parse_requirements(&to_document(&spec)).map_err(|e| e.to_string())?;
    ensure!(again.budget == spec.budget && again.agent_roster == spec.agent_roster, "serialize/parse drifted");
    ensure!(again.forbidden_libraries == spec.forbidden_libraries, "prohibitions drifted");
    Ok("100/500/1000 points, 0.007, 120/150/180 min, PM1 SE1 PG3 CD1, cuBLAS+MKL".into())
}

fn points_formula() -> Check {
    let rate = d("0.007");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let budget = Budget { min_points: d("100"), reference_points: d("500"), max_points: d("1000000") };
    let mut ledger = BudgetLedger::new(budget);
    let mut millionths: i128 = 0;
    for i in 0..1000u64 {
        let elapsed_ms: i64 = rng.gen_range(0..20_000_000);
        let gpus: u32 = rng.gen_range(1..=16);
        let elapsed_s = Decimal::new(elapsed_ms, 3);
        let points = compute_points(elapsed_s, gpus, rate).map_err(|e| e.to_string())?;
        // seconds * 7/1000 * gpus in millionths: ms * 7 * gpus
        let expected = i128::from(elapsed_ms) * 7 * i128::from(gpus);
        ensure!(points == Decimal::from_i128_with_scale(expected, 6), "pair {i}: {elapsed_s} s x {gpus} -> {points}");
        millionths += expected;
        ledger.charge(&JobRecord {
            id: i,
            version: Version::new(1, 0, 0),
            backend: "t".into(),
            resource_group: "t".into(),
            gpus,
            submitted: 0,
            started: 0,
            ended: 0,
            elapsed_s,
            points,
            outcome: JobOutcome::Done,
            outputs: JobOutputs::default(),
        });
    }
    ensure!(ledger.spent_points == Decimal::from_i128_with_scale(millionths, 6), "ledger {}", ledger.spent_points);
    Ok(format!("1000 pairs exact, ledger total {}", ledger.spent_points.normalize()))
}

fn history_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/history.events.log");
    let state = cmd_replay(&fixture, dir.path()).map_err(|e| e.to_string())?;
    let sota = state.changelog.sota_candidate().ok_or("no SOTA")?;
    let m = sota.metrics.as_ref().ok_or("SOTA without metrics")?;
    ensure!(sota.version == Version::new(1, 4, 0), "SOTA {}", sota.version);
    ensure!(m.gflops == 3365.2 && m.efficiency_pct == 43.14, "SOTA metrics {m:?}");
    let v130 = state.changelog.get(&Version::new(1, 3, 0)).ok_or("v1.3.0 missing")?;
    ensure!(v130.status == CandidateStatus::Invalid, "v1.3.0 is {:?}", v130.status);
    let report = std::fs::read_to_string(dir.path().join("report.md")).map_err(|e| e.to_string())?;
    ensure!(report.contains("v1.4.0, 3365.2 GFLOPS, 43.14%"), "report does not state the valid best");
    let perf = std::fs::read_to_string(dir.path().join("exports/performance.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = perf.lines().skip(1).collect();
    ensure!(rows.len() == 7, "{} performance rows", rows.len());
    ensure!(rows.iter().any(|r| r.contains("1.3.0") && r.contains("Invalid") && r.ends_with("false")), "v1.3.0 row");
    let peak = state.peak_gflops.ok_or("no peak")?;
    let mut worst: f64 = 0.0;
    for (ver, _, _, perf, _) in HISTORY_ROWS {
        let Some((g, printed)) = perf else { continue };
        let recomputed = g / peak * 100.0;
        worst = worst.max((recomputed - printed).abs());
        let recorded = state.changelog.get(&Version::parse(ver).unwrap()).and_then(|c| c.metrics.clone());
        ensure!(recorded.is_some_and(|r| r.efficiency_pct == printed), "v{ver} recorded efficiency differs");
    }
    ensure!(worst <= 0.05, "recomputed efficiency off by {worst:.4} pp");
    Ok(format!("SOTA v1.4.0 3365.2 GFLOPS 43.14%, v1.3.0 Invalid, max efficiency deviation {worst:.3} pp"))
}

fn project(dir: &Path, edit: impl FnOnce(String) -> String) -> Result<(), String> {
    cmd_init(dir).map_err(|e| e.to_string())?;
    let req = dir.join("requirement_definition.md");
    let text = std::fs::read_to_string(&req).map_err(|e| e.to_string())?;
    std::fs::write(&req, edit(text)).map_err(|e| e.to_string())
}

fn run_project(dir: &Path, o: &RunOverrides) -> Result<(vibehpc_core::orchestrator::RunSummary, Vec<TelemetryEvent>), String> {
    let outcome = cmd_run(dir, o).map_err(|e| e.to_string())?;
    let RunOutcome::Finished(summary) = outcome else { return Err("run did not execute".into()) };
    let events = read_log(&dir.join("telemetry/events.log")).map_err(|e| e.to_string())?;
    Ok((summary, events))
}

fn violation_scenario() -> Check {
    let overrides = RunOverrides {
        mode: Some(Mode::Multi),
        seed: Some(7),
        scenario: Some("violation-demo".into()),
        ..Default::default()
    };
    let mut logs = Vec::new();
    let mut detail = String::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        project(dir.path(), |t| t)?;
        let (summary, events) = run_project(dir.path(), &overrides)?;

        let planted: Vec<Version> = events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::CandidateRegistered { snapshot } if snapshot.candidate.label == LIBRARY_LABEL => {
                    Some(snapshot.candidate.version.clone())
                }
                _ => None,
            })
            .collect();
        let [v] = &planted[..] else { return Err(format!("expected one planted candidate, got {planted:?}")) };
        let source = std::fs::read_to_string(dir.path().join(format!("candidates/v{v}/gemm.cu"))).map_err(|e| e.to_string())?;
        ensure!(source.contains("cublasDgemm"), "planted source lacks cublasDgemm");

        let seq_of = |pred: &dyn Fn(&TelemetryEvent) -> bool| events.iter().find(|e| pred(e)).map(|e| e.seq);
        let recorded = seq_of(&|e| {
            matches!(&e.body, EventBody::ResultRecorded { snapshot } if snapshot.candidate.version == *v
                && snapshot.candidate.status != CandidateStatus::Invalid)
        })
        .ok_or("result never recorded")?;
        let flagged = seq_of(&|e| e.agent == "CD" && matches!(&e.body, EventBody::Violation { version, .. } if version == v))
            .ok_or("CD never flagged it")?;
        let invalidated = seq_of(&|e| {
            e.agent == "PM"
                && matches!(&e.body, EventBody::ResultRecorded { snapshot } if snapshot.candidate.version == *v
                    && snapshot.candidate.status == CandidateStatus::Invalid)
        })
        .ok_or("PM never invalidated it")?;
        ensure!(recorded < flagged && flagged < invalidated, "order {recorded} / {flagged} / {invalidated}");
        ensure!(invalidated - recorded <= 10, "invalidated {} events after recording", invalidated - recorded);

        ensure!(summary.sota.as_ref().is_none_or(|s| &s.0 != v), "planted candidate is the final SOTA");
        let announced = events.iter().any(|e| match &e.body {
            EventBody::MessageSent { message } => message.body.contains(&format!("SOTA update: v{v} ")),
            EventBody::Report { summary, .. } => summary.contains(&format!("v{v} ")),
            EventBody::Published { version, .. } => version == v,
            _ => false,
        });
        ensure!(!announced, "planted candidate was announced or published as SOTA");
        ensure!(!dir.path().join(format!("publish/v{v}")).exists(), "publish/v{v} exists");
        ensure!(audit_publish(&dir.path().join("publish"), &["cuBLAS".into(), "MKL".into()]).map_err(|e| e.to_string())?.is_empty(), "publish/ has prohibited code");
        detail = format!("v{v} recorded at seq {recorded}, flagged {flagged}, invalidated {invalidated}");
        logs.push(masked_lines(&events));
    }
    ensure!(logs[0] == logs[1], "event logs differ between runs");
    Ok(format!("{detail}; two runs identical ({} events)", logs[0].len()))
}

fn solo_vs_multi() -> Check {
    let forbidden = ["cuBLAS".to_string(), "MKL".to_string()];
    let seeds = 20u64;
    let mut solo_missed = 0;
    let (mut attempts, mut caught) = (0, 0);
    for seed in 0..seeds {
        for mode in [Mode::Solo, Mode::Multi] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            project(dir.path(), |t| t)?;
            let o = RunOverrides { mode: Some(mode), seed: Some(seed), scenario: Some("memory-loss".into()), ..Default::default() };
            let (_, events) = run_project(dir.path(), &o)?;
            let flagged = audit_publish(&dir.path().join("publish"), &forbidden).map_err(|e| e.to_string())?;
            if mode == Mode::Solo {
                solo_missed += usize::from(!flagged.is_empty());
                continue;
            }
            ensure!(flagged.is_empty(), "seed {seed}: multi published {} prohibited versions", flagged.len());
            let state = replay(&events).map_err(|e| e.to_string())?;
            for c in state.changelog.current().into_iter().filter(|c| c.label == LIBRARY_LABEL) {
                attempts += 1;
                caught += usize::from(matches!(c.status, CandidateStatus::Invalid | CandidateStatus::Failed));
            }
        }
    }
    ensure!(attempts > 0, "multi runs never attempted a prohibited shortcut");
    ensure!(caught == attempts, "multi caught {caught}/{attempts}");
    ensure!(solo_missed * 10 >= seeds as usize * 8, "solo missed a violation in only {solo_missed}/{seeds} seeds");
    Ok(format!("multi caught {caught}/{attempts} attempts, solo published prohibited code in {solo_missed}/{seeds} seeds"))
}

fn auto_compact() -> Check {
    let roster = AgentRoster([(Role::PM, 1)].into_iter().collect());
    let mut reg = AgentRegistry::new(roster, Mode::Multi, AgentMemory::default());
    let mut log = EventLog::in_memory();
    reg.spawn_agent(&mut log, 0, &Requester::Launcher, Role::PM).map_err(|e| e.to_string())?;
    let policy = CompactionPolicy::default();
    // 40k per tick: 160k at tick 4 (reset to 20k), then 180k at tick 8
    let mut live = Vec::new();
    for tick in 1..=10u64 {
        reg.record_tokens(&mut log, tick, "PM", 40_000).map_err(|e| e.to_string())?;
        if let Some(c) = reg.maybe_autocompact(&mut log, tick, "PM", policy, "digest").map_err(|e| e.to_string())? {
            ensure!(c.tokens_after < 150_000, "compaction left {} tokens", c.tokens_after);
        }
        live.push((tick, reg.get("PM").unwrap().context_tokens));
    }
    let compactions: Vec<_> = log.events().iter().filter(|e| e.body.kind() == "Compaction").collect();
    ensure!(compactions.len() == 2, "{} compactions", compactions.len());
    let mut series = BTreeMap::new();
    let mut counter = 0u64;
    for e in log.events() {
        match &e.body {
            EventBody::TokenUsage { delta, .. } => counter += delta,
            EventBody::Compaction { tokens_after, .. } => counter = *tokens_after,
            _ => {}
        }
        series.insert(e.tick, counter);
    }
    for (tick, tokens) in &live {
        ensure!(series.get(tick) == Some(tokens), "tick {tick}: log says {:?}, counter {tokens}", series.get(tick));
    }
    Ok(format!("2 compactions at ticks {} and {}", compactions[0].tick, compactions[1].tick))
}

fn budget_enforcement() -> Check {
    let o = RunOverrides { mode: Some(Mode::Solo), seed: Some(5), ..Default::default() };
    let probe = tempfile::tempdir().map_err(|e| e.to_string())?;
    project(probe.path(), |t| t)?;
    let (_, events) = run_project(probe.path(), &o)?;
    let first: Vec<Decimal> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::JobDone { record } => Some(record.points),
            _ => None,
        })
        .take(3)
        .collect();
    ensure!(first.len() == 3, "probe ran only {} jobs", first.len());
    let max = first.iter().copied().sum::<Decimal>() - d("0.001");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    project(dir.path(), |t| {
        t.replace("**Minimum Consumption Line**: 100 points", "**Minimum Consumption Line**: 1 points")
            .replace("**Reference**: 500 points", "**Reference**: 2 points")
            .replace("**Maximum**: 1,000 points", &format!("**Maximum**: {max} points"))
    })?;
    let outcome = cmd_run(dir.path(), &o).map_err(|e| e.to_string())?;
    let code = outcome.exit_code();
    let events = read_log(&dir.path().join("telemetry/events.log")).map_err(|e| e.to_string())?;
    let mut exceeded_at = None;
    let mut submits = 0;
    for e in &events {
        match &e.body {
            EventBody::JobSubmitted { .. } => {
                submits += 1;
                ensure!(exceeded_at.is_none(), "Submit at seq {} after Exceeded", e.seq);
            }
            EventBody::BudgetUpdate { status: BudgetStatus::Exceeded, .. } if exceeded_at.is_none() => exceeded_at = Some(e.seq),
            _ => {}
        }
    }
    ensure!(exceeded_at.is_some(), "budget never exceeded");
    ensure!(submits == 3, "{submits} submissions");
    ensure!(code == 2, "exit code {code}");
    Ok(format!("max {max} points: 3 jobs, Exceeded at seq {}, exit code 2", exceeded_at.unwrap()))
}

fn verification() -> Check {
    let (m, n, k) = (7, 5, 3);
    let a = Matrix64::random(m, k, 1);
    let b = Matrix64::random(k, n, 2);
    let c0 = Matrix64::random(m, n, 3);
    let mut reference = c0.clone();
    gemm_naive(1.0, &a, &b, 1.0, &mut reference).map_err(|e| e.to_string())?;
    let mut buggy = c0.clone();
    gemm_tiled(TileShape::new(4, 4, 2), 1.0, &a, &b, 1.0, &mut buggy, true).map_err(|e| e.to_string())?;
    let tol = 1e-12;
    let bad = verify_error_norm(&buggy, &reference).map_err(|e| e.to_string())?;
    ensure!(bad > tol, "buggy norm {bad}");
    ensure!(accuracy_verdict(bad, tol) == AccuracyVerdict::Failed, "buggy kernel accepted");
    let mut same = c0.clone();
    gemm_naive(1.0, &a, &b, 1.0, &mut same).map_err(|e| e.to_string())?;
    let zero = verify_error_norm(&same, &reference).map_err(|e| e.to_string())?;
    ensure!(zero == 0.0, "identical inputs gave norm {zero}");
    ensure!(accuracy_verdict(zero, tol) == AccuracyVerdict::Valid, "identical result rejected");

    let model = PerfModel::case_study();
    let params: Params = [("BLOCK_M", 64), ("BLOCK_N", 64), ("BLOCK_K", 16), ("THREAD_M", 4), ("THREAD_N", 4)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let request = |label: &str| JobRequest {
        id: 1,
        version: Version::new(1, 5, 1),
        label: label.into(),
        params: params.clone(),
        sources: Vec::new(),
        gpus: 4,
        resource_group: "sim".into(),
        submitted: 0,
    };
    let faulty = submit_simulated(&model, &request("Boundary condition"), 1, d("0.007")).map_err(|e| e.to_string())?;
    ensure!(verdict_for(&faulty, tol).0 == CandidateStatus::Failed, "faulty simulated kernel not Failed");
    let sound = submit_simulated(&model, &request("Double buffering"), 1, d("0.007")).map_err(|e| e.to_string())?;
    ensure!(verdict_for(&sound, tol).0 == CandidateStatus::Valid, "sound simulated kernel not Valid");
    Ok(format!("7x5x3 buggy norm {bad:.3e} Failed, identical norm 0 Valid"))
}

fn determinism() -> Check {
    let o = RunOverrides { mode: Some(Mode::Multi), seed: Some(42), scenario: Some("memory-loss".into()), ..Default::default() };
    let mut logs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        project(dir.path(), |t| t)?;
        let (_, events) = run_project(dir.path(), &o)?;
        logs.push(masked_lines(&events));
    }
    ensure!(!logs[0].is_empty(), "empty log");
    if let Some(i) = (0..logs[0].len().min(logs[1].len())).find(|&i| logs[0][i] != logs[1][i]) {
        return Err(format!("logs diverge at line {}", i + 1));
    }
    ensure!(logs[0].len() == logs[1].len(), "log lengths differ");
    Ok(format!("{} events identical with wall time masked", logs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 9] = [
        ("requirements round-trip", Duration::from_secs(1), requirements_round_trip),
        ("points formula", Duration::from_secs(1), points_formula),
        ("history replay", Duration::from_secs(1), history_replay),
        ("violation scenario", Duration::from_secs(10), violation_scenario),
        ("solo vs multi", Duration::from_secs(60), solo_vs_multi),
        ("auto-compact", Duration::from_secs(1), auto_compact),
        ("budget enforcement", Duration::from_secs(10), budget_enforcement),
        ("verification", Duration::from_secs(1), verification),
        ("determinism", Duration::from_secs(20), determinism),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
