//! The append-only event log that every other module writes to, plus the
//! views, exports and reports derived from it.

mod export;
mod markdown;
mod replay;
mod report;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agents::{Mode, Role};
use crate::bus::Message;
use crate::exec::{AnonymizationViolation, BudgetStatus, JobId, JobRecord, LintViolation};
use crate::requirements::Budget;
use crate::tuning::{Snapshot, Version};

pub use export::{export_all, export_series, BudgetRow, PerformanceRow, SeriesKind, TokenRow};
pub use markdown::render_markdown_report;
pub use replay::{replay, AgentLifecycle, AgentSnapshot, ReplayState};
pub use report::{context_usage_report, AgentSeries, CompactionMarker, ContextUsageReport};

/// Logical time. One tick models one minute of project time.
pub type Tick = u64;

pub const SYSTEM: &str = "SYSTEM";

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("fixture parse error at line {line}: {message}")]
    FixtureParseError { line: usize, message: String },
    #[error("inconsistent log at seq {seq}: {message}")]
    Inconsistent { seq: u64, message: String },
}

impl From<std::io::Error> for TelemetryError {
    fn from(e: std::io::Error) -> Self {
        Self::StorageFailure(e.to_string())
    }
}

impl From<csv::Error> for TelemetryError {
    fn from(e: csv::Error) -> Self {
        Self::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Setup,
    Running,
    Terminating,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    ProjectStarted {
        project: String,
        mode: Mode,
        seed: u64,
        scenario: String,
        backend: String,
        budget: Budget,
        point_rate: Decimal,
        peak_gflops: f64,
    },
    PhaseChange {
        phase: Phase,
        reason: Option<String>,
    },
    /// The event's agent is the new agent.
    Spawn {
        role: Role,
        requester: String,
        compact_threshold: u64,
    },
    Terminate {
        reason: String,
    },
    TokenUsage {
        delta: u64,
        total: u64,
    },
    Compaction {
        tokens_before: u64,
        tokens_after: u64,
        lossy: bool,
        summary: String,
    },
    Wake {
        idle_ticks: u64,
    },
    MessageSent {
        message: Message,
    },
    CandidateRegistered {
        snapshot: Snapshot,
    },
    ResultRecorded {
        snapshot: Snapshot,
    },
    JobSubmitted {
        job: JobId,
        version: Version,
        backend: String,
        gpus: u32,
        resource_group: String,
    },
    JobRejected {
        version: Version,
        reason: String,
    },
    JobDone {
        record: JobRecord,
    },
    BudgetUpdate {
        spent_points: Decimal,
        job_count: u64,
        status: BudgetStatus,
    },
    AccuracyTarget {
        tolerance: f64,
    },
    Violation {
        version: Version,
        lint: Vec<LintViolation>,
        anonymization: Vec<AnonymizationViolation>,
    },
    Review {
        version: Version,
        clean: bool,
    },
    Published {
        version: Version,
        path: String,
    },
    Report {
        path: String,
        summary: String,
    },
    Error {
        message: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::ProjectStarted { .. } => "ProjectStarted",
            Self::PhaseChange { .. } => "PhaseChange",
            Self::Spawn { .. } => "Spawn",
            Self::Terminate { .. } => "Terminate",
            Self::TokenUsage { .. } => "TokenUsage",
            Self::Compaction { .. } => "Compaction",
            Self::Wake { .. } => "Wake",
            Self::MessageSent { .. } => "MessageSent",
            Self::CandidateRegistered { .. } => "CandidateRegistered",
            Self::ResultRecorded { .. } => "ResultRecorded",
            Self::JobSubmitted { .. } => "JobSubmitted",
            Self::JobRejected { .. } => "JobRejected",
            Self::JobDone { .. } => "JobDone",
            Self::BudgetUpdate { .. } => "BudgetUpdate",
            Self::AccuracyTarget { .. } => "AccuracyTarget",
            Self::Violation { .. } => "Violation",
            Self::Review { .. } => "Review",
            Self::Published { .. } => "Published",
            Self::Report { .. } => "Report",
            Self::Error { .. } => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub seq: u64,
    pub tick: Tick,
    /// Seconds since the Unix epoch. Informational only.
    pub wall_time: f64,
    pub agent: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    System,
    Fixed(f64),
}

impl Clock {
    fn now(self) -> f64 {
        match self {
            Self::System => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0.0, |d| (d.as_millis() as f64) / 1000.0),
            Self::Fixed(t) => t,
        }
    }
}

/// In-memory event list, optionally mirrored line by line to a file.
#[derive(Debug)]
pub struct EventLog {
    events: Vec<TelemetryEvent>,
    sink: Option<(PathBuf, File)>,
    clock: Clock,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { events: Vec::new(), sink: None, clock: Clock::System }
    }

    /// Creates (truncating) `path` and appends every event to it.
    pub fn create(path: &Path) -> Result<Self, TelemetryError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        Ok(Self { events: Vec::new(), sink: Some((path.to_path_buf(), file)), clock: Clock::System })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn append(&mut self, tick: Tick, agent: &str, body: EventBody) -> Result<u64, TelemetryError> {
        let seq = self.events.len() as u64 + 1;
        let event = TelemetryEvent { seq, tick, wall_time: self.clock.now(), agent: agent.to_string(), body };
        if let Some((_, f)) = self.sink.as_mut() {
            let line = serde_json::to_string(&event).map_err(|e| TelemetryError::StorageFailure(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        self.events.push(event);
        Ok(seq)
    }

    pub fn events(&self) -> &[TelemetryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_tick(&self) -> Tick {
        self.events.last().map_or(0, |e| e.tick)
    }
}

pub fn parse_log(text: &str) -> Result<Vec<TelemetryEvent>, TelemetryError> {
    let mut out: Vec<TelemetryEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: TelemetryEvent = serde_json::from_str(line)
            .map_err(|err| TelemetryError::FixtureParseError { line: i + 1, message: err.to_string() })?;
        if let Some(prev) = out.last() {
            if e.seq <= prev.seq {
                return Err(TelemetryError::FixtureParseError {
                    line: i + 1,
                    message: format!("seq {} does not increase", e.seq),
                });
            }
        }
        out.push(e);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<TelemetryEvent>, TelemetryError> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// JSON lines of `events` with `wall_time` zeroed, for reproducibility checks.
pub fn masked_lines(events: &[TelemetryEvent]) -> Vec<String> {
    events
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.wall_time = 0.0;
            serde_json::to_string(&e).unwrap_or_default()
        })
        .collect()
}

/// Same as [`masked_lines`] but straight from log text.
pub fn mask_wall_time(text: &str) -> Result<Vec<String>, TelemetryError> {
    Ok(masked_lines(&parse_log(text)?))
}
