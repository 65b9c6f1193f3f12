//! Project directories: scaffold, configuration, run, status, replay and
//! the offline audit of published sources.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{Mode, PolicyConfig, Role};
use crate::exec::{
    lint_files, Backend, LintViolation, LocalBackend, PerfModel, RemoteBackend, RemoteProfile, SimulatedBackend,
    SourceFile,
};
use crate::fixtures::SAMPLE_REQUIREMENTS;
use crate::orchestrator::{BrainKind, Orchestrator, RunConfig, RunError, RunSummary};
use crate::requirements::{parse_requirements, validate_spec, RequirementSpec};
use crate::roles::{default_template, Scenario, TEMPLATE_SLOTS};
use crate::telemetry::{
    export_all, read_log, render_markdown_report, replay, AgentLifecycle, ReplayState, TelemetryError,
};
use crate::tuning::{ParamSpace, StrategyKind, Version};

pub const CONFIG_FILE: &str = "project.toml";
pub const EVENTS_LOG: &str = "telemetry/events.log";

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("directory is not empty: {0}")]
    DirNotEmpty(PathBuf),
    #[error("not a project directory (no {CONFIG_FILE}): {0}")]
    NotAProject(PathBuf),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProjectError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl ProjectError {
    /// 3 for anything the operator has to fix in the inputs, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::DirNotEmpty(_) | Self::NotAProject(_) | Self::ConfigInvalid(_) => 3,
            Self::Telemetry(TelemetryError::FixtureParseError { .. }) => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Simulated,
    Local,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simulated" => Ok(Self::Simulated),
            "local" => Ok(Self::Local),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown backend `{other}` (known: simulated, local, remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSettings {
    pub build_cmd: String,
    pub run_cmd: String,
}

impl Default for LocalSettings {
    fn default() -> Self {
        Self { build_cmd: "make".into(), run_cmd: "./gemm".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    /// Connection and scheduler profile, relative to the project directory.
    pub profile: String,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self { profile: "remote.toml".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_ticks: u64,
    pub compact_threshold: u64,
    pub idle_patience: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_ticks: 1000,
            compact_threshold: crate::agents::DEFAULT_COMPACT_THRESHOLD,
            idle_patience: crate::agents::DEFAULT_IDLE_PATIENCE,
        }
    }
}

/// Contents of `project.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub name: String,
    pub requirements: String,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub scenario: String,
    pub backend: BackendKind,
    pub strategy: StrategyKind,
    pub resource_group: String,
    /// Account names scrubbed from published sources.
    pub user_ids: Vec<String>,
    /// Directory of per-role prompt templates.
    pub templates: String,
    pub limits: Limits,
    pub policy: PolicyConfig,
    pub brain: BrainKind,
    pub space: Option<ParamSpace>,
    pub local: LocalSettings,
    pub remote: RemoteSettings,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            name: "gemm-tuning".into(),
            requirements: "requirement_definition.md".into(),
            mode: Mode::Multi,
            seed: None,
            scenario: "baseline".into(),
            backend: BackendKind::Simulated,
            strategy: StrategyKind::Random,
            resource_group: "default".into(),
            user_ids: Vec::new(),
            templates: "roles".into(),
            limits: Limits::default(),
            policy: PolicyConfig::default(),
            brain: BrainKind::default(),
            space: None,
            local: LocalSettings::default(),
            remote: RemoteSettings::default(),
        }
    }
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<Self, ProjectError> {
        toml::from_str(text).map_err(|e| ProjectError::ConfigInvalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn load(dir: &Path) -> Result<Self, ProjectError> {
        let path = dir.join(CONFIG_FILE);
        if !path.is_file() {
            return Err(ProjectError::NotAProject(dir.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &RunOverrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(b) = o.backend {
            self.backend = b;
        }
        if let Some(s) = &o.scenario {
            self.scenario = s.clone();
        }
        if let Some(t) = o.max_ticks {
            self.limits.max_ticks = t;
        }
    }

    fn needs_seed(&self) -> bool {
        self.backend == BackendKind::Simulated || matches!(self.brain, BrainKind::Scripted { .. })
    }
}

/// Command-line values that take precedence over `project.toml`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub scenario: Option<String>,
    pub max_ticks: Option<u64>,
    pub dry: bool,
}

fn template_file(role: Role, mode: Mode) -> String {
    match mode {
        Mode::Solo => "solo.txt".into(),
        Mode::Multi => format!("{}.txt", role.to_string().to_lowercase()),
    }
}

fn is_empty_dir(dir: &Path) -> Result<bool, std::io::Error> {
    Ok(!dir.exists() || std::fs::read_dir(dir)?.next().is_none())
}

/// Scaffolds a fresh project and returns the files written.
pub fn cmd_init(dir: &Path) -> Result<Vec<PathBuf>, ProjectError> {
    if !is_empty_dir(dir)? {
        return Err(ProjectError::DirNotEmpty(dir.to_path_buf()));
    }
    let cfg = ProjectConfig { seed: Some(7), ..ProjectConfig::default() };
    let mut files = vec![
        (PathBuf::from(&cfg.requirements), SAMPLE_REQUIREMENTS.to_string()),
        (PathBuf::from(CONFIG_FILE), cfg.to_toml()),
    ];
    for role in [Role::PM, Role::SE, Role::PG, Role::CD] {
        let rel = Path::new(&cfg.templates).join(template_file(role, Mode::Multi));
        files.push((rel, default_template(role, Mode::Multi)));
    }
    files.push((Path::new(&cfg.templates).join(template_file(Role::PG, Mode::Solo)), default_template(Role::PG, Mode::Solo)));

    for sub in ["telemetry/exports", "reports/img", "candidates", "publish", "jobs"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut written = Vec::new();
    for (rel, text) in files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Everything needed to start a run, resolved and checked.
pub struct Prepared {
    pub config: ProjectConfig,
    pub spec: RequirementSpec,
    pub run: RunConfig,
}

fn invalid(msg: impl Into<String>) -> ProjectError {
    ProjectError::ConfigInvalid(msg.into())
}

/// Loads and validates the project without touching its run state.
pub fn prepare(dir: &Path, overrides: &RunOverrides) -> Result<Prepared, ProjectError> {
    let mut config = ProjectConfig::load(dir)?;
    config.apply(overrides);

    let req_path = dir.join(&config.requirements);
    let text = std::fs::read_to_string(&req_path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", req_path.display())))?;
    let spec = parse_requirements(&text).map_err(|e| invalid(e.to_string()))?;
    let problems = validate_spec(&spec);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        return Err(invalid(list.join("; ")));
    }

    let seed = match config.seed {
        Some(s) => s,
        None if config.needs_seed() => return Err(invalid("a seed is required for simulated or scripted runs")),
        None => 0,
    };
    let scenario = Scenario::named(&config.scenario).map_err(invalid)?;
    if let Some((agent, _)) = &scenario.plant {
        if config.mode == Mode::Solo && agent != "PG1.1" {
            return Err(invalid(format!("scenario `{}` plants into {agent}, which solo mode never spawns", scenario.name)));
        }
    }
    let space = config.space.clone().unwrap_or_else(ParamSpace::gemm_default);
    if space.size() == 0 {
        return Err(invalid("parameter space is empty"));
    }
    if config.policy.gpus_per_job == 0 || config.policy.max_inflight == 0 {
        return Err(invalid("gpus_per_job and max_inflight must be positive"));
    }

    let mut templates = BTreeMap::new();
    for role in [Role::PM, Role::SE, Role::PG, Role::CD] {
        let path = dir.join(&config.templates).join(template_file(role, config.mode));
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e.into()),
        };
        if !TEMPLATE_SLOTS.iter().any(|s| text.contains(s)) {
            return Err(invalid(format!("template {} uses none of the known slots", path.display())));
        }
        templates.insert(role, text);
    }
    if config.backend == BackendKind::Remote {
        let profile = dir.join(&config.remote.profile);
        let text = std::fs::read_to_string(&profile)
            .map_err(|e| invalid(format!("cannot read {}: {e}", profile.display())))?;
        RemoteProfile::from_toml(&text).map_err(invalid)?;
    }

    let mut run = RunConfig::new(&config.name, config.mode, seed);
    run.scenario = scenario;
    run.strategy = config.strategy;
    run.space = space;
    run.policy = config.policy.clone();
    run.brain = config.brain.clone();
    run.max_ticks = config.limits.max_ticks;
    run.resource_group = config.resource_group.clone();
    run.user_ids = config.user_ids.clone();
    run.compact_threshold = config.limits.compact_threshold;
    run.idle_patience = config.limits.idle_patience;
    run.templates = templates;
    Ok(Prepared { config, spec, run })
}

fn backend_for(dir: &Path, p: &Prepared) -> Result<Box<dyn Backend>, ProjectError> {
    Ok(match p.config.backend {
        BackendKind::Simulated => Box::new(SimulatedBackend::new(PerfModel::case_study(), p.run.seed)),
        BackendKind::Local => Box::new(LocalBackend::new(dir, &p.config.local.build_cmd, &p.config.local.run_cmd)),
        BackendKind::Remote => {
            let text = std::fs::read_to_string(dir.join(&p.config.remote.profile))?;
            Box::new(RemoteBackend::new(dir, RemoteProfile::from_toml(&text).map_err(invalid)?))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    /// `--dry`: the configuration checked out; nothing ran.
    Validated { project: String, mode: Mode, backend: BackendKind, seed: Option<u64> },
    Finished(RunSummary),
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validated { .. } => 0,
            Self::Finished(s) => s.exit_code,
        }
    }
}

impl std::fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validated { project, mode, backend, seed } => {
                let seed = seed.map_or("none".to_string(), |s| s.to_string());
                write!(f, "configuration valid: {project} ({mode}, {backend:?} backend, seed {seed})")
            }
            Self::Finished(s) => s.fmt(f),
        }
    }
}

pub fn cmd_run(dir: &Path, overrides: &RunOverrides) -> Result<RunOutcome, ProjectError> {
    cmd_run_with_interrupt(dir, overrides, None)
}

/// [`cmd_run`] with a flag that asks the manager to stop the project.
pub fn cmd_run_with_interrupt(
    dir: &Path,
    overrides: &RunOverrides,
    interrupt: Option<Arc<AtomicBool>>,
) -> Result<RunOutcome, ProjectError> {
    let prepared = prepare(dir, overrides)?;
    if overrides.dry {
        let c = &prepared.config;
        return Ok(RunOutcome::Validated { project: c.name.clone(), mode: c.mode, backend: c.backend, seed: c.seed });
    }
    for sub in ["candidates", "publish", "reports", "telemetry/exports"] {
        let path = dir.join(sub);
        if sub != "telemetry/exports" && path.exists() {
            std::fs::remove_dir_all(&path)?;
        }
        std::fs::create_dir_all(&path)?;
    }
    let backend = backend_for(dir, &prepared)?;
    let mut orch = Orchestrator::new(prepared.run, prepared.spec, backend, Some(dir))?;
    if let Some(flag) = interrupt {
        orch.set_interrupt(flag);
    }
    Ok(RunOutcome::Finished(orch.run()?))
}

/// Phase, live agents, budget and SOTA as reconstructed from the event log.
pub fn cmd_status(dir: &Path) -> Result<String, ProjectError> {
    ProjectConfig::load(dir)?;
    let path = dir.join(EVENTS_LOG);
    let events = if path.is_file() { read_log(&path)? } else { Vec::new() };
    if events.is_empty() {
        return Ok("not started".into());
    }
    Ok(status_text(&replay(&events)?))
}

pub fn status_text(state: &ReplayState) -> String {
    let mut out = String::new();
    let phase = state.phase.map_or("unknown".to_string(), |p| format!("{p:?}"));
    let _ = writeln!(out, "project: {}", state.project.as_deref().unwrap_or("?"));
    let _ = writeln!(out, "phase: {phase} (tick {})", state.last_tick);
    let _ = writeln!(out, "agents:");
    let live: Vec<_> = state.agents.iter().filter(|(_, a)| a.lifecycle != AgentLifecycle::Terminated).collect();
    if live.is_empty() {
        let _ = writeln!(out, "  (none live)");
    }
    for (id, a) in live {
        let _ = writeln!(
            out,
            "  {id} [{}] context {} tokens, cumulative {}, compactions {}",
            a.role, a.context_tokens, a.cumulative_tokens, a.compactions
        );
    }
    let l = &state.ledger;
    let _ = writeln!(
        out,
        "budget: {} of {} points over {} jobs ({:?})",
        l.spent_points.normalize(),
        l.thresholds.max_points.normalize(),
        l.job_count,
        l.status()
    );
    match state.changelog.sota_candidate() {
        Some(c) => {
            let (g, e) = c.metrics.as_ref().map_or((0.0, 0.0), |m| (m.gflops, m.efficiency_pct));
            let _ = writeln!(out, "SOTA: v{} {g:.1} GFLOPS ({e:.2}%)", c.version);
        }
        None => {
            let _ = writeln!(out, "SOTA: none");
        }
    }
    if let Some(r) = &state.termination_reason {
        let _ = writeln!(out, "terminated: {r}");
    }
    out.trim_end().to_string()
}

/// Rebuilds exports and the report from a recorded log alone.
pub fn cmd_replay(fixture: &Path, out: &Path) -> Result<ReplayState, ProjectError> {
    let events = read_log(fixture)?;
    let state = replay(&events)?;
    export_all(&events, &out.join("exports"))?;
    render_markdown_report(&events, out)?;
    Ok(state)
}

/// Regenerates the project's exports and report from its event log.
pub fn cmd_report(dir: &Path) -> Result<PathBuf, ProjectError> {
    ProjectConfig::load(dir)?;
    let events = read_log(&dir.join(EVENTS_LOG))?;
    export_all(&events, &dir.join("telemetry/exports"))?;
    Ok(render_markdown_report(&events, &dir.join("reports"))?)
}

/// Lints every published version against `forbidden`.
pub fn audit_publish(publish: &Path, forbidden: &[String]) -> Result<Vec<(Version, Vec<LintViolation>)>, ProjectError> {
    let mut out = Vec::new();
    if !publish.is_dir() {
        return Ok(out);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(publish)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    dirs.sort();
    for d in dirs {
        let Some(version) = d
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix('v'))
            .and_then(|v| Version::parse(v).ok())
        else {
            continue;
        };
        let mut files = Vec::new();
        let mut names: Vec<PathBuf> = std::fs::read_dir(&d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        names.sort();
        for f in names.into_iter().filter(|p| p.is_file()) {
            let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
            files.push(SourceFile::new(name, std::fs::read_to_string(&f)?));
        }
        let hits = lint_files(&files, forbidden);
        if !hits.is_empty() {
            out.push((version, hits));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Offline audit of a project's `publish/` against its requirements file.
pub fn cmd_audit(dir: &Path) -> Result<Vec<(Version, Vec<LintViolation>)>, ProjectError> {
    let config = ProjectConfig::load(dir)?;
    let text = std::fs::read_to_string(dir.join(&config.requirements))?;
    let spec = parse_requirements(&text).map_err(|e| invalid(e.to_string()))?;
    audit_publish(&dir.join("publish"), &spec.forbidden_libraries)
}
