//! Builds and runs candidates on this machine inside `jobs/<id>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;

use super::{
    fill, finalize_job, parse_metric_lines, shell, Backend, Capabilities, ExecError, JobCompletion, JobId, JobPoll,
    JobRecord, JobRequest,
};
use crate::telemetry::Tick;

#[derive(Debug, Clone)]
pub struct LocalBackend {
    pub root: PathBuf,
    /// Run in `build/`; `{src}`, `{build}`, `{out}` are substituted.
    pub build_cmd: String,
    /// Run in `build/` after a successful build.
    pub run_cmd: String,
    jobs: BTreeMap<JobId, JobCompletion>,
}

struct LocalRun {
    stdout: String,
    stderr: String,
    elapsed_s: Decimal,
}

impl LocalBackend {
    pub fn new(root: impl Into<PathBuf>, build_cmd: impl Into<String>, run_cmd: impl Into<String>) -> Self {
        Self { root: root.into(), build_cmd: build_cmd.into(), run_cmd: run_cmd.into(), jobs: BTreeMap::new() }
    }

    pub fn job_dir(&self, id: JobId) -> PathBuf {
        self.root.join("jobs").join(id.to_string())
    }

    fn execute(&self, request: &JobRequest) -> Result<LocalRun, ExecError> {
        let dir = self.job_dir(request.id);
        let (src, build, out) = (dir.join("src"), dir.join("build"), dir.join("out"));
        for d in [&src, &build, &out] {
            std::fs::create_dir_all(d)?;
        }
        for f in &request.sources {
            write_inside(&src, &f.name, &f.content)?;
        }
        let vars = [
            ("src", src.to_string_lossy().into_owned()),
            ("build", build.to_string_lossy().into_owned()),
            ("out", out.to_string_lossy().into_owned()),
        ];
        let vars: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();

        let (ok, so, se) = shell(&fill(&self.build_cmd, &vars), &build)?;
        std::fs::write(out.join("build.log"), format!("{so}{se}"))?;
        if !ok {
            return Err(ExecError::BuildFailed(format!("{so}{se}")));
        }
        let t0 = Instant::now();
        let (ok, stdout, stderr) = shell(&fill(&self.run_cmd, &vars), &build)?;
        let elapsed = Decimal::from_f64(t0.elapsed().as_secs_f64()).unwrap_or_default().round_dp(3);
        if !ok {
            return Err(ExecError::RunFailed(format!("{stdout}{stderr}")));
        }
        Ok(LocalRun { stdout, stderr, elapsed_s: elapsed })
    }
}

fn write_inside(dir: &Path, name: &str, content: &str) -> Result<(), ExecError> {
    let rel = Path::new(name);
    if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(ExecError::Io(format!("source path escapes the sandbox: {name}")));
    }
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Builds and runs one candidate synchronously. Stdout must carry METRIC lines.
pub fn submit_local(backend: &LocalBackend, request: &JobRequest, rate: Decimal) -> Result<JobRecord, ExecError> {
    let run = backend.execute(request)?;
    parse_metric_lines(&run.stdout)?;
    let dir = backend.job_dir(request.id);
    finalize_job(
        request,
        backend.tag(),
        JobCompletion {
            started: request.submitted,
            ended: request.submitted,
            elapsed_s: run.elapsed_s,
            stdout: run.stdout,
            stderr: run.stderr,
            error: None,
            charge: true,
        },
        rate,
        Some((&dir.join("out"), &backend.root)),
    )
}

impl Backend for LocalBackend {
    fn tag(&self) -> &'static str {
        "local"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_gpus: 1, supports_remote: false }
    }

    fn submit(&mut self, request: &JobRequest) -> Result<(), ExecError> {
        let started = request.submitted;
        let completion = match self.execute(request) {
            Ok(run) => JobCompletion {
                started,
                ended: started + 1,
                elapsed_s: run.elapsed_s,
                stdout: run.stdout,
                stderr: run.stderr,
                error: None,
                charge: true,
            },
            Err(e @ (ExecError::BuildFailed(_) | ExecError::RunFailed(_))) => JobCompletion {
                started,
                ended: started + 1,
                elapsed_s: Decimal::ZERO,
                stdout: String::new(),
                stderr: e.to_string(),
                error: Some(e.to_string()),
                charge: true,
            },
            Err(e) => return Err(e),
        };
        self.jobs.insert(request.id, completion);
        Ok(())
    }

    fn poll(&mut self, id: JobId, now: Tick) -> Result<JobPoll, ExecError> {
        let c = self.jobs.get(&id).ok_or(ExecError::UnknownJob(id))?;
        if now >= c.ended {
            Ok(JobPoll::Finished(self.jobs.remove(&id).unwrap()))
        } else {
            Ok(JobPoll::Running)
        }
    }
}
