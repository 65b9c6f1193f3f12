use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::{context_usage_report, replay, TelemetryError, TelemetryEvent};
use crate::tuning::CandidateStatus;

/// Writes `report.md` into `dest` and returns its path. Images found under
/// `dest/img/` are linked by relative path.
pub fn render_markdown_report(events: &[TelemetryEvent], dest: &Path) -> Result<PathBuf, TelemetryError> {
    let state = replay(events)?;
    let mut out = String::new();
    let title = state.project.as_deref().unwrap_or("project");
    let _ = writeln!(out, "# Tuning report: {title}\n");
    if let Some(reason) = &state.termination_reason {
        let _ = writeln!(out, "Terminated at tick {}: {reason}\n", state.last_tick);
    }

    let _ = writeln!(out, "## SOTA\n");
    match state.changelog.sota_candidate() {
        Some(c) => {
            let m = c.metrics.as_ref().unwrap();
            let _ = writeln!(
                out,
                "Valid best: v{}, {:.1} GFLOPS, {:.2}% ({})\n",
                c.version, m.gflops, m.efficiency_pct, c.label
            );
        }
        None => {
            let _ = writeln!(out, "No valid candidate yet.\n");
        }
    }

    let _ = writeln!(out, "## Candidates\n");
    let candidates = state.changelog.current();
    if candidates.is_empty() {
        let _ = writeln!(out, "No candidates.\n");
    } else {
        let sota = state.changelog.sota().map(|s| s.0);
        let _ = writeln!(out, "| Version | GFLOPS | Efficiency | Status | Label |\n|---|---|---|---|---|");
        for c in candidates {
            let (g, e) = match (c.status, c.metrics.as_ref()) {
                (CandidateStatus::Pending, _) => ("TBD".to_string(), "TBD".to_string()),
                (CandidateStatus::Failed, _) | (_, None) => ("N/A".to_string(), "N/A".to_string()),
                (_, Some(m)) => (format!("{:.1}", m.gflops), format!("{:.2}%", m.efficiency_pct)),
            };
            let mark = if sota.as_ref() == Some(&c.version) { " (SOTA)" } else { "" };
            let _ = writeln!(out, "| v{} | {g} | {e} | {}{mark} | {} |", c.version, c.status, c.label);
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Budget\n");
    let b = &state.ledger.thresholds;
    let _ = writeln!(
        out,
        "Spent {} points over {} jobs (min {}, reference {}, max {}): {}\n",
        state.ledger.spent_points.normalize(),
        state.ledger.job_count,
        b.min_points.normalize(),
        b.reference_points.normalize(),
        b.max_points.normalize(),
        state.ledger.status()
    );

    let _ = writeln!(out, "## Requirement violations\n");
    if state.violations.is_empty() {
        let _ = writeln!(out, "None detected.\n");
    } else {
        for (v, what) in &state.violations {
            let _ = writeln!(out, "* v{v}: {}", what.join(", "));
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Context usage\n");
    let usage = context_usage_report(events, None);
    if usage.is_empty() {
        let _ = writeln!(out, "No token activity.\n");
    } else {
        let _ = writeln!(out, "| Agent | Context | Total | Compactions |\n|---|---|---|---|");
        for s in &usage.series {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.agent,
                s.points.last().map_or(0, |p| p.1),
                usage.totals.get(&s.agent).copied().unwrap_or(0),
                usage.compaction_count(&s.agent)
            );
        }
        out.push('\n');
    }

    let images = list_images(&dest.join("img"))?;
    if !images.is_empty() {
        let _ = writeln!(out, "## Figures\n");
        for name in images {
            let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s);
            let _ = writeln!(out, "![{stem}](img/{name})\n");
        }
    }

    std::fs::create_dir_all(dest)?;
    let path = dest.join("report.md");
    std::fs::write(&path, out)?;
    Ok(path)
}

fn list_images(dir: &Path) -> Result<Vec<String>, TelemetryError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| {
            let l = n.to_lowercase();
            l.ends_with(".png") || l.ends_with(".svg")
        })
        .collect();
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_project_has_no_links() {
        let dir = tempfile::tempdir().unwrap();
        let p = render_markdown_report(&[], dir.path()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.contains("No candidates."));
        assert!(!text.contains("]("));
    }

    #[test]
    fn images_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("img")).unwrap();
        std::fs::write(dir.path().join("img/performance.png"), b"png").unwrap();
        std::fs::write(dir.path().join("img/notes.txt"), b"x").unwrap();
        let text = std::fs::read_to_string(render_markdown_report(&[], dir.path()).unwrap()).unwrap();
        assert!(text.contains("![performance](img/performance.png)"));
        assert!(!text.contains("notes.txt"));
        let abs = dir.path().to_string_lossy().into_owned();
        assert!(!text.contains(&abs));
    }
}
