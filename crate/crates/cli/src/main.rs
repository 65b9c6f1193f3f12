use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use vibehpc_core::agents::Mode;
use vibehpc_core::project::{
    cmd_audit, cmd_init, cmd_replay, cmd_report, cmd_run_with_interrupt, cmd_status, BackendKind, ProjectError,
    RunOverrides,
};

#[derive(Parser)]
#[command(name = "vibehpc", version, about = "Multi-agent GEMM kernel tuning on a points budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scaffold a project in an empty or missing directory.
    Init { dir: PathBuf },
    /// Run the project until it terminates.
    Run {
        #[arg(default_value = ".")]
        dir: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Validate the configuration and exit.
        #[arg(long)]
        dry: bool,
    },
    /// Phase, agents, budget and SOTA of a project.
    Status {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Rebuild exports and the report from a recorded event log.
    Replay {
        fixture: PathBuf,
        #[arg(long, default_value = "replay")]
        out: PathBuf,
    },
    /// Regenerate a project's exports and report.
    Report {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Lint published sources against the prohibited libraries.
    Audit {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
}

fn fail(e: ProjectError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Init { dir } => match cmd_init(&dir) {
            Ok(files) => {
                println!("initialized {} ({} files)", dir.display(), files.len());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run { dir, mode, seed, backend, scenario, max_ticks, dry } => {
            let overrides = RunOverrides { mode, seed, backend, scenario, max_ticks, dry };
            let flag = Arc::new(AtomicBool::new(false));
            let handler_flag = flag.clone();
            if let Err(e) = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst)) {
                eprintln!("warning: no signal handler: {e}");
            }
            match cmd_run_with_interrupt(&dir, &overrides, Some(flag)) {
                Ok(outcome) => {
                    println!("{outcome}");
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Status { dir } => match cmd_status(&dir) {
            Ok(text) => {
                println!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Replay { fixture, out } => match cmd_replay(&fixture, &out) {
            Ok(state) => {
                match state.changelog.sota_candidate().and_then(|c| c.metrics.as_ref().map(|m| (c, m))) {
                    Some((c, m)) => println!("valid best: v{} {:.1} GFLOPS ({:.2}%)", c.version, m.gflops, m.efficiency_pct),
                    None => println!("valid best: none"),
                }
                println!("report written to {}", out.join("report.md").display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Report { dir } => match cmd_report(&dir) {
            Ok(path) => {
                println!("report written to {}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Audit { dir } => match cmd_audit(&dir) {
            Ok(findings) if findings.is_empty() => {
                println!("publish/ is clean");
                ExitCode::SUCCESS
            }
            Ok(findings) => {
                for (v, hits) in &findings {
                    for h in hits {
                        println!("v{v} {}:{} {} ({:?}): {}", h.file, h.line, h.library, h.kind, h.excerpt.trim());
                    }
                }
                ExitCode::from(1)
            }
            Err(e) => fail(e),
        },
    }
}
