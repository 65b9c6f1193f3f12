//! Batch-scheduled execution on a remote cluster driven by shell command
//! templates. Defaults follow a pjsub/pjstat style scheduler over ssh/scp.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::LazyLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{
    fill, finalize_job, shell, Backend, Capabilities, ExecError, JobCompletion, JobId, JobPoll, JobRecord,
    JobRequest,
};
use crate::telemetry::Tick;

/// How to reach the cluster. Templates may use `{host}`, `{workdir}`, `{job}`,
/// `{local_src}`, `{local_out}`, `{stdout}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectionProfile {
    pub host: String,
    pub workdir: String,
    pub transfer: String,
    pub build: String,
    pub fetch: String,
}

impl Default for ConnectionProfile {
    fn default() -> Self {
        Self {
            host: "login.example".into(),
            workdir: "vibehpc".into(),
            transfer: "ssh {host} 'mkdir -p {workdir}' && scp -rq {local_src} {host}:{workdir}/{job}".into(),
            build: "ssh {host} 'cd {workdir}/{job} && make'".into(),
            fetch: "scp -q {host}:{workdir}/{job}/{stdout} {local_out}/stdout.txt".into(),
        }
    }
}

/// Scheduler commands and how to read their output. Templates additionally
/// see `{script}` and, after submission, `{jobid}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerProfile {
    pub submit: String,
    pub poll: String,
    pub jobid_pattern: String,
    pub running_pattern: String,
    pub done_pattern: String,
    pub failed_pattern: String,
    /// First capture is `H:MM:SS` or seconds.
    pub elapsed_pattern: String,
    pub script_name: String,
    /// Job script; sees `{rscgrp}`, `{gpus}`, `{run}`, `{stdout}`.
    pub script_template: String,
    pub stdout_name: String,
    pub run_cmd: String,
    pub max_polls: u32,
}

impl Default for SchedulerProfile {
    fn default() -> Self {
        Self {
            submit: "ssh {host} 'cd {workdir}/{job} && pjsub {script}'".into(),
            poll: "ssh {host} 'pjstat -H -v {jobid}'".into(),
            jobid_pattern: r"Job (\d+) submitted".into(),
            running_pattern: r"\bRUN\b".into(),
            done_pattern: r"\b(EXT|END)\b".into(),
            failed_pattern: r"\b(CCL|ERR|RJT)\b".into(),
            elapsed_pattern: r"ELAPSE\s*[=:]?\s*(\d+:\d{2}:\d{2}|\d+(?:\.\d+)?)".into(),
            script_name: "job.sh".into(),
            script_template: "#!/bin/sh\n#PJM -L rscgrp={rscgrp}\n#PJM -L node=1\n#PJM -L gpu={gpus}\n\
                              #PJM -L elapse=0:10:00\n#PJM -o {stdout}\n#PJM -j\n{run}\n"
                .into(),
            stdout_name: "job.out".into(),
            run_cmd: "./gemm".into(),
            max_polls: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RemoteProfile {
    pub connection: ConnectionProfile,
    pub scheduler: SchedulerProfile,
}

impl RemoteProfile {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
struct RemoteJob {
    sched_id: String,
    polls: u32,
    started: Option<Tick>,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub root: PathBuf,
    pub profile: RemoteProfile,
    jobs: BTreeMap<JobId, RemoteJob>,
}

static HMS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\d+):(\d{2}):(\d{2})$").unwrap());

fn parse_elapsed(s: &str) -> Option<Decimal> {
    if let Some(c) = HMS.captures(s) {
        let n = |i: usize| c[i].parse::<i64>().ok();
        return Some(Decimal::from(n(1)? * 3600 + n(2)? * 60 + n(3)?));
    }
    s.parse().ok()
}

fn regex(p: &str) -> Result<Regex, ExecError> {
    Regex::new(p).map_err(|e| ExecError::Io(format!("bad pattern `{p}`: {e}")))
}

impl RemoteBackend {
    pub fn new(root: impl Into<PathBuf>, profile: RemoteProfile) -> Self {
        Self { root: root.into(), profile, jobs: BTreeMap::new() }
    }

    pub fn job_dir(&self, id: JobId) -> PathBuf {
        self.root.join("jobs").join(id.to_string())
    }

    fn vars(&self, id: JobId, sched_id: &str) -> Vec<(&'static str, String)> {
        let dir = self.job_dir(id);
        let c = &self.profile.connection;
        let s = &self.profile.scheduler;
        vec![
            ("host", c.host.clone()),
            ("workdir", c.workdir.clone()),
            ("job", format!("job{id}")),
            ("local_src", dir.join("src").to_string_lossy().into_owned()),
            ("local_out", dir.join("out").to_string_lossy().into_owned()),
            ("stdout", s.stdout_name.clone()),
            ("script", s.script_name.clone()),
            ("jobid", sched_id.to_string()),
        ]
    }

    fn run(&self, template: &str, id: JobId, sched_id: &str) -> Result<(bool, String, String), ExecError> {
        let owned = self.vars(id, sched_id);
        let vars: Vec<(&str, &str)> = owned.iter().map(|(k, v)| (*k, v.as_str())).collect();
        shell(&fill(template, &vars), &self.root)
    }

    /// Stages, builds on the login node and submits. Returns the scheduler id.
    pub fn stage_and_submit(&mut self, request: &JobRequest) -> Result<String, ExecError> {
        let dir = self.job_dir(request.id);
        let src = dir.join("src");
        std::fs::create_dir_all(&src)?;
        std::fs::create_dir_all(dir.join("out"))?;
        for f in &request.sources {
            std::fs::write(src.join(&f.name), &f.content)?;
        }
        let s = &self.profile.scheduler;
        let gpus = request.gpus.to_string();
        let script = fill(
            &s.script_template,
            &[("rscgrp", &request.resource_group), ("gpus", &gpus), ("run", &s.run_cmd), ("stdout", &s.stdout_name)],
        );
        std::fs::write(src.join(&s.script_name), script)?;

        let (ok, so, se) = self.run(&self.profile.connection.transfer, request.id, "")?;
        if !ok {
            return Err(ExecError::TransferFailed(format!("{so}{se}")));
        }
        let (ok, so, se) = self.run(&self.profile.connection.build, request.id, "")?;
        if !ok {
            return Err(ExecError::BuildFailed(format!("{so}{se}")));
        }
        let (ok, so, se) = self.run(&self.profile.scheduler.submit, request.id, "")?;
        if !ok {
            return Err(ExecError::SubmitRejected(format!("{so}{se}")));
        }
        let id = regex(&self.profile.scheduler.jobid_pattern)?
            .captures(&so)
            .and_then(|c| c.get(1))
            .map(|m| m.as_str().to_string())
            .ok_or_else(|| ExecError::SubmitRejected(format!("no job id in submit output:\n{so}{se}")))?;
        self.jobs.insert(request.id, RemoteJob { sched_id: id.clone(), polls: 0, started: None });
        Ok(id)
    }

    /// One scheduler query. Terminal failures remove the job and come back as `Err`.
    pub fn poll_job(&mut self, id: JobId, now: Tick) -> Result<JobPoll, ExecError> {
        let job = self.jobs.get(&id).cloned().ok_or(ExecError::UnknownJob(id))?;
        let s = self.profile.scheduler.clone();
        let (_, so, se) = self.run(&s.poll, id, &job.sched_id)?;
        let status = format!("{so}{se}");
        let elapsed = regex(&s.elapsed_pattern)?
            .captures(&status)
            .and_then(|c| c.get(1))
            .and_then(|m| parse_elapsed(m.as_str()));
        let done = regex(&s.done_pattern)?.is_match(&status);
        let failed = regex(&s.failed_pattern)?.is_match(&status);
        if done || failed {
            self.jobs.remove(&id);
            let (ok, fo, fe) = self.run(&self.profile.connection.fetch, id, &job.sched_id)?;
            if !ok {
                return Err(ExecError::FetchFailed(format!("{fo}{fe}")));
            }
            let stdout = std::fs::read_to_string(self.job_dir(id).join("out").join("stdout.txt")).unwrap_or_default();
            let started = job.started.unwrap_or(now);
            return Ok(JobPoll::Finished(JobCompletion {
                started,
                ended: now,
                elapsed_s: elapsed.unwrap_or_default(),
                stdout,
                stderr: status.clone(),
                error: failed.then(|| format!("scheduler reported failure:\n{status}")),
                charge: elapsed.is_some(),
            }));
        }
        let entry = self.jobs.get_mut(&id).unwrap();
        entry.polls += 1;
        if entry.polls > s.max_polls {
            self.jobs.remove(&id);
            return Err(ExecError::PollTimeout);
        }
        if regex(&s.running_pattern)?.is_match(&status) {
            entry.started.get_or_insert(now);
            Ok(JobPoll::Running)
        } else {
            Ok(JobPoll::Pending)
        }
    }
}

/// Submits and polls once per tick until the job finishes.
pub fn submit_remote(
    backend: &mut RemoteBackend,
    request: &JobRequest,
    rate: Decimal,
) -> Result<JobRecord, ExecError> {
    backend.stage_and_submit(request)?;
    let mut now = request.submitted;
    loop {
        now += 1;
        if let JobPoll::Finished(c) = backend.poll_job(request.id, now)? {
            let dir = backend.job_dir(request.id).join("out");
            return finalize_job(request, "remote", c, rate, Some((&dir, &backend.root)));
        }
    }
}

impl Backend for RemoteBackend {
    fn tag(&self) -> &'static str {
        "remote"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_gpus: 8, supports_remote: true }
    }

    fn submit(&mut self, request: &JobRequest) -> Result<(), ExecError> {
        self.stage_and_submit(request).map(|_| ())
    }

    fn poll(&mut self, id: JobId, now: Tick) -> Result<JobPoll, ExecError> {
        match self.poll_job(id, now) {
            Err(e @ (ExecError::PollTimeout | ExecError::FetchFailed(_))) => Ok(JobPoll::Finished(JobCompletion {
                started: now,
                ended: now,
                elapsed_s: Decimal::ZERO,
                stdout: String::new(),
                stderr: e.to_string(),
                error: Some(e.to_string()),
                charge: false,
            })),
            other => other,
        }
    }
}
