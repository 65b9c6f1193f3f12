use std::fmt::Write;

use super::{RequiredSection, RequirementSpec, Tolerance};

/// Renders the canonical `requirement_spec` document.
///
/// Sections listed in `missing_items` are left out so that re-parsing yields
/// the same missing list; everything recognized is written in the headed
/// form the parser accepts.
pub fn to_document(spec: &RequirementSpec) -> String {
    let missing = |s: RequiredSection| spec.missing_items.iter().any(|m| m == s.name());
    let mut out = String::from("# Requirements Definition Document\n");

    if !missing(RequiredSection::ProjectInformation) {
        let _ = writeln!(out, "## Project Information\n* **Project Name**: {}", spec.project_name);
    }
    if !missing(RequiredSection::Budget) {
        let b = &spec.budget;
        let _ = writeln!(
            out,
            "## Computational Resource Budget\n* **Minimum Consumption Line**: {} points\n\
             * **Reference**: {} points\n* **Maximum**: {} points",
            b.min_points.normalize(),
            b.reference_points.normalize(),
            b.max_points.normalize()
        );
    }
    if !missing(RequiredSection::Rate) {
        let _ = writeln!(
            out,
            "## Subsystem Rate\nPoints are calculated as elapsed time (seconds) x {} x number of GPUs used.",
            spec.point_rate.normalize()
        );
    }
    if !missing(RequiredSection::TimeLimit) {
        let t = &spec.time_limits;
        let _ = writeln!(
            out,
            "## Time Limit\n* Minimum: {} min\n* Reference: {} min\n* Maximum: {} min",
            t.min, t.reference, t.max
        );
    }
    if !missing(RequiredSection::AgentConfiguration) {
        out.push_str("## Agent Configuration\n```\n");
        for (role, n) in &spec.agent_roster.0 {
            if *n == 1 {
                let _ = writeln!(out, "{role}");
            } else {
                let _ = writeln!(out, "{role} x {n}");
            }
        }
        out.push_str("```\n");
    }
    if !spec.forbidden_libraries.is_empty() {
        out.push_str("## Forbidden Libraries\n");
        for lib in &spec.forbidden_libraries {
            let _ = writeln!(out, "* `{lib}`");
        }
    }
    let _ = writeln!(out, "## Input/Output Type\n* [x] {}", spec.accuracy.value_type);
    if !missing(RequiredSection::AccuracyRequirements) {
        let tol = match spec.accuracy.tolerance {
            Tolerance::PmAssigned => "pm-assigned".to_string(),
            Tolerance::Value(v) => format!("{v:e}"),
        };
        let _ = writeln!(
            out,
            "## Accuracy Requirements\n* **Error Metric**: {}\n* **Tolerance**: {}",
            spec.accuracy.error_metric, tol
        );
    }
    if !missing(RequiredSection::AvailableHardware) {
        let _ = writeln!(out, "## Available Hardware\n* [x] {} GPUs per node", spec.hardware.gpus_per_node);
    }
    if !missing(RequiredSection::PeakPerformance) {
        let _ = writeln!(
            out,
            "## Peak Performance\n* **Per GPU**: {} GFLOPS\n* **Node**: {} GFLOPS",
            spec.hardware.peak_gflops_per_gpu, spec.hardware.peak_gflops_node
        );
    }
    if !spec.priorities.is_empty() {
        out.push_str("## Priorities\n");
        for p in &spec.priorities {
            let _ = writeln!(out, "* [x] {p}");
        }
    }
    let mark = |on: bool| if on { "x" } else { " " };
    let _ = writeln!(out, "## GitHub Integration\n* [{}] Use enabled", mark(spec.publish.enabled));
    let _ = writeln!(
        out,
        "## Security Requirements\n* [{}] Anonymize user information before publishing",
        mark(spec.publish.anonymize)
    );
    for note in &spec.notes {
        let _ = writeln!(out, "## {}\n{}", note.heading, note.body);
    }
    let missing_list = if spec.missing_items.is_empty() {
        "none".to_string()
    } else {
        spec.missing_items.join(", ")
    };
    let _ = writeln!(out, "## Auto-Generated Information (Filled by PM)\n* **Missing Items**: {missing_list}");
    out
}
