//! CSV and JSONL exports consumed by the plotting tool.
//!
//! `performance.csv`: tick, version, gflops, efficiency_pct, measured_gflops,
//! error_norm, status, label, is_sota. Invalid rows carry zero performance,
//! Failed and Pending rows none; `measured_gflops` keeps the raw number.
//!
//! `budget.csv`: tick, spent_points, min, reference, max, job.
//!
//! `tokens.csv`: tick, agent, context_tokens, compaction_flag.
//!
//! `changelog.csv`: version, gflops, efficiency_pct, error_norm, status, label, tick.

use std::io::Write;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{replay, EventBody, TelemetryError, TelemetryEvent, Tick};
use crate::exec::JobId;
use crate::requirements::Budget;
use crate::tuning::{CandidateStatus, ChangeLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Performance,
    Budget,
    Tokens,
    ChangeLog,
}

impl SeriesKind {
    pub const ALL: [SeriesKind; 4] = [Self::Performance, Self::Budget, Self::Tokens, Self::ChangeLog];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub tick: Tick,
    pub version: String,
    pub gflops: Option<f64>,
    pub efficiency_pct: Option<f64>,
    pub measured_gflops: Option<f64>,
    pub error_norm: Option<f64>,
    pub status: CandidateStatus,
    pub label: String,
    pub is_sota: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub tick: Tick,
    pub spent_points: Decimal,
    pub min: Decimal,
    pub reference: Decimal,
    pub max: Decimal,
    pub job: Option<JobId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRow {
    pub tick: Tick,
    pub agent: String,
    pub context_tokens: u64,
    pub compaction_flag: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeLogRow {
    pub version: String,
    pub gflops: Option<f64>,
    pub efficiency_pct: Option<f64>,
    pub error_norm: Option<f64>,
    pub status: CandidateStatus,
    pub label: String,
    pub tick: Tick,
}

/// Performance numbers as they may be shown: zero for Invalid, none for
/// Failed and Pending.
fn shown(status: CandidateStatus, value: Option<f64>) -> Option<f64> {
    match status {
        CandidateStatus::Valid => value,
        CandidateStatus::Invalid => Some(0.0),
        CandidateStatus::Failed | CandidateStatus::Pending => None,
    }
}

pub fn performance_rows(log: &ChangeLog) -> Vec<PerformanceRow> {
    let sota = log.sota().map(|s| s.0);
    let ticks = latest_ticks(log);
    log.current()
        .into_iter()
        .map(|c| {
            let m = c.metrics.as_ref();
            PerformanceRow {
                tick: ticks.get(&c.version.to_string()).copied().unwrap_or(0),
                version: c.version.to_string(),
                gflops: shown(c.status, m.map(|m| m.gflops)),
                efficiency_pct: shown(c.status, m.map(|m| m.efficiency_pct)),
                measured_gflops: m.map(|m| m.gflops),
                error_norm: m.map(|m| m.error_norm),
                status: c.status,
                label: c.label.clone(),
                is_sota: sota.as_ref() == Some(&c.version),
            }
        })
        .collect()
}

fn latest_ticks(log: &ChangeLog) -> std::collections::BTreeMap<String, Tick> {
    log.entries().iter().map(|s| (s.candidate.version.to_string(), s.tick)).collect()
}

pub fn changelog_rows(log: &ChangeLog) -> Vec<ChangeLogRow> {
    performance_rows(log)
        .into_iter()
        .map(|r| ChangeLogRow {
            version: r.version,
            gflops: r.gflops,
            efficiency_pct: r.efficiency_pct,
            error_norm: r.error_norm,
            status: r.status,
            label: r.label,
            tick: r.tick,
        })
        .collect()
}

pub fn budget_rows(events: &[TelemetryEvent]) -> Vec<BudgetRow> {
    let mut rows = Vec::new();
    let mut budget: Option<Budget> = None;
    let mut spent = Decimal::ZERO;
    for e in events {
        match &e.body {
            EventBody::ProjectStarted { budget: b, .. } => {
                budget = Some(b.clone());
                rows.push(row(e.tick, spent, b, None));
            }
            EventBody::JobDone { record } => {
                spent += record.points;
                if let Some(b) = &budget {
                    rows.push(row(e.tick, spent, b, Some(record.id)));
                }
            }
            _ => {}
        }
    }
    rows
}

fn row(tick: Tick, spent: Decimal, b: &Budget, job: Option<JobId>) -> BudgetRow {
    BudgetRow {
        tick,
        spent_points: spent,
        min: b.min_points,
        reference: b.reference_points,
        max: b.max_points,
        job,
    }
}

pub fn token_rows(events: &[TelemetryEvent]) -> Vec<TokenRow> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::TokenUsage { total, .. } => Some(TokenRow {
                tick: e.tick,
                agent: e.agent.clone(),
                context_tokens: *total,
                compaction_flag: 0,
            }),
            EventBody::Compaction { tokens_after, .. } => Some(TokenRow {
                tick: e.tick,
                agent: e.agent.clone(),
                context_tokens: *tokens_after,
                compaction_flag: 1,
            }),
            _ => None,
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), TelemetryError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const PERFORMANCE_COLUMNS: [&str; 9] =
    ["tick", "version", "gflops", "efficiency_pct", "measured_gflops", "error_norm", "status", "label", "is_sota"];
pub const BUDGET_COLUMNS: [&str; 6] = ["tick", "spent_points", "min", "reference", "max", "job"];
pub const TOKEN_COLUMNS: [&str; 4] = ["tick", "agent", "context_tokens", "compaction_flag"];
pub const CHANGELOG_COLUMNS: [&str; 7] = ["version", "gflops", "efficiency_pct", "error_norm", "status", "label", "tick"];

/// Writes one series into `dest` and returns the files written.
pub fn export_series(
    events: &[TelemetryEvent],
    which: SeriesKind,
    dest: &Path,
) -> Result<Vec<PathBuf>, TelemetryError> {
    std::fs::create_dir_all(dest)?;
    let changelog = || -> Result<ChangeLog, TelemetryError> { Ok(replay(events)?.changelog) };
    match which {
        SeriesKind::Performance => {
            let p = dest.join("performance.csv");
            write_csv(&p, &performance_rows(&changelog()?), &PERFORMANCE_COLUMNS)?;
            Ok(vec![p])
        }
        SeriesKind::Budget => {
            let p = dest.join("budget.csv");
            write_csv(&p, &budget_rows(events), &BUDGET_COLUMNS)?;
            Ok(vec![p])
        }
        SeriesKind::Tokens => {
            let p = dest.join("tokens.csv");
            write_csv(&p, &token_rows(events), &TOKEN_COLUMNS)?;
            Ok(vec![p])
        }
        SeriesKind::ChangeLog => {
            let log = changelog()?;
            let csv_path = dest.join("changelog.csv");
            write_csv(&csv_path, &changelog_rows(&log), &CHANGELOG_COLUMNS)?;
            let jsonl = dest.join("changelog.jsonl");
            let mut f = std::fs::File::create(&jsonl)?;
            for s in log.entries() {
                let line = serde_json::to_string(s).map_err(|e| TelemetryError::StorageFailure(e.to_string()))?;
                writeln!(f, "{line}")?;
            }
            Ok(vec![csv_path, jsonl])
        }
    }
}

pub fn export_all(events: &[TelemetryEvent], dest: &Path) -> Result<Vec<PathBuf>, TelemetryError> {
    let mut out = Vec::new();
    for k in SeriesKind::ALL {
        out.extend(export_series(events, k, dest)?);
    }
    Ok(out)
}
