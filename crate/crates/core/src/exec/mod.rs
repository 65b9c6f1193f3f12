//! Execution backends, point accounting, performance math, verification and
//! forbidden-library linting.

mod budget;
mod lint;
mod local;
mod metrics;
mod perf;
mod remote;
mod simulated;
mod verify;

use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::telemetry::Tick;
use crate::tuning::{Params, Version};

pub use budget::{budget_status, compute_points, status_for, BudgetLedger, BudgetStatus, NEAR_MAX_FRACTION};
pub use lint::{
    anonymize, lint_files, lint_forbidden, scan_anonymization, AnonymizationFinding, AnonymizationViolation, HitKind,
    LintViolation, SourceFile,
};
pub use local::{submit_local, LocalBackend};
pub use metrics::{format_metric, parse_metric_lines};
pub use perf::{efficiency_pct, gemm_flops, gflops};
pub use remote::{submit_remote, ConnectionProfile, RemoteBackend, RemoteProfile, SchedulerProfile};
pub use simulated::{submit_simulated, LabelModel, PerfModel, SimulatedBackend, LABEL_LADDER, LIBRARY_LABEL};
pub use verify::{
    accuracy_verdict, check_kernel, gemm_naive, gemm_tiled, relative_error, verify_error_norm, AccuracyVerdict,
    Matrix, TileShape,
};

pub type JobId = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("negative input")]
    NegativeInput,
    #[error("matrix dimensions must be positive")]
    NonPositiveDim,
    #[error("peak performance must be positive")]
    NonPositivePeak,
    #[error("matrix shapes do not match")]
    ShapeMismatch,
    #[error("metric parse error: {0}")]
    MetricParseError(String),
    #[error("resource overflow: {bytes} bytes of shared memory requested, limit {limit}")]
    ResourceOverflow { bytes: u64, limit: u64 },
    #[error("unknown parameter `{0}`")]
    UnknownParams(String),
    #[error("build failed:\n{0}")]
    BuildFailed(String),
    #[error("run failed:\n{0}")]
    RunFailed(String),
    #[error("transfer failed:\n{0}")]
    TransferFailed(String),
    #[error("submit rejected:\n{0}")]
    SubmitRejected(String),
    #[error("job did not finish within the poll limit")]
    PollTimeout,
    #[error("fetch failed:\n{0}")]
    FetchFailed(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ExecError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// What a backend needs to build and run one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub id: JobId,
    pub version: Version,
    pub label: String,
    pub params: Params,
    pub sources: Vec<SourceFile>,
    pub gpus: u32,
    pub resource_group: String,
    pub submitted: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_gpus: u32,
    pub supports_remote: bool,
}

/// Raw result of a finished job, before billing.
#[derive(Debug, Clone, PartialEq)]
pub struct JobCompletion {
    pub started: Tick,
    pub ended: Tick,
    pub elapsed_s: Decimal,
    pub stdout: String,
    pub stderr: String,
    pub error: Option<String>,
    /// False when the scheduler never reported a usable elapsed time.
    pub charge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobPoll {
    Pending,
    Running,
    Finished(JobCompletion),
}

/// An execution target. `submit` never blocks on the job itself; completion
/// is observed through `poll`.
pub trait Backend {
    fn tag(&self) -> &'static str;
    fn capabilities(&self) -> Capabilities;
    fn submit(&mut self, request: &JobRequest) -> Result<(), ExecError>;
    fn poll(&mut self, id: JobId, now: Tick) -> Result<JobPoll, ExecError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "message")]
pub enum JobOutcome {
    Done,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct JobOutputs {
    pub stdout_ref: Option<String>,
    pub stderr_ref: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub version: Version,
    pub backend: String,
    pub resource_group: String,
    pub gpus: u32,
    pub submitted: Tick,
    pub started: Tick,
    pub ended: Tick,
    pub elapsed_s: Decimal,
    pub points: Decimal,
    pub outcome: JobOutcome,
    pub outputs: JobOutputs,
}

impl JobRecord {
    pub fn is_done(&self) -> bool {
        self.outcome == JobOutcome::Done
    }
}

/// Bills a completion and parses its metrics. When `out_dir` is given the raw
/// streams are written there and referenced relative to `ref_base`.
pub fn finalize_job(
    request: &JobRequest,
    backend: &str,
    completion: JobCompletion,
    rate: Decimal,
    out_dir: Option<(&Path, &Path)>,
) -> Result<JobRecord, ExecError> {
    let points = if completion.charge {
        compute_points(completion.elapsed_s, request.gpus, rate)?
    } else {
        Decimal::ZERO
    };
    let mut outputs = JobOutputs::default();
    if let Some((dir, base)) = out_dir {
        std::fs::create_dir_all(dir)?;
        let so = dir.join("stdout.txt");
        let se = dir.join("stderr.txt");
        std::fs::write(&so, &completion.stdout)?;
        std::fs::write(&se, &completion.stderr)?;
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
        outputs.stdout_ref = Some(rel(&so));
        outputs.stderr_ref = Some(rel(&se));
    }
    let outcome = match completion.error {
        Some(e) => JobOutcome::Error(e),
        None => match parse_metric_lines(&completion.stdout) {
            Ok(m) => {
                outputs.metrics = m;
                JobOutcome::Done
            }
            Err(e) => JobOutcome::Error(e.to_string()),
        },
    };
    Ok(JobRecord {
        id: request.id,
        version: request.version.clone(),
        backend: backend.to_string(),
        resource_group: request.resource_group.clone(),
        gpus: request.gpus,
        submitted: request.submitted,
        started: completion.started.max(request.submitted),
        ended: completion.ended.max(completion.started).max(request.submitted),
        elapsed_s: completion.elapsed_s,
        points,
        outcome,
        outputs,
    })
}

/// Runs `sh -c cmd` in `dir`, returning (success, stdout, stderr).
pub(crate) fn shell(cmd: &str, dir: &Path) -> Result<(bool, String, String), ExecError> {
    let out = std::process::Command::new("sh").arg("-c").arg(cmd).current_dir(dir).output()?;
    Ok((
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    ))
}

/// Replaces `{name}` placeholders.
pub(crate) fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
