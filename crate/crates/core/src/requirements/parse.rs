use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use rust_decimal::Decimal;

use super::{
    Accuracy, AgentRoster, Budget, Note, RequirementSpec, RequirementsError, TimeLimits, Tolerance,
};
use crate::agents::Role;

/// Sections whose absence is reported through `missing_items`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RequiredSection {
    ProjectInformation,
    Budget,
    Rate,
    TimeLimit,
    AgentConfiguration,
    AccuracyRequirements,
    AvailableHardware,
    PeakPerformance,
}

impl RequiredSection {
    pub fn name(self) -> &'static str {
        match self {
            Self::ProjectInformation => "Project Information",
            Self::Budget => "Computational Resource Budget",
            Self::Rate => "Subsystem Rate",
            Self::TimeLimit => "Time Limit",
            Self::AgentConfiguration => "Agent Configuration",
            Self::AccuracyRequirements => "Accuracy Requirements",
            Self::AvailableHardware => "Available Hardware",
            Self::PeakPerformance => "Peak Performance",
        }
    }
}

pub const REQUIRED_SECTIONS: [RequiredSection; 8] = [
    RequiredSection::ProjectInformation,
    RequiredSection::Budget,
    RequiredSection::Rate,
    RequiredSection::TimeLimit,
    RequiredSection::AgentConfiguration,
    RequiredSection::AccuracyRequirements,
    RequiredSection::AvailableHardware,
    RequiredSection::PeakPerformance,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Required(RequiredSection),
    IoType,
    Priorities,
    Publishing,
    Security,
    Prohibitions,
    AutoGenerated,
    /// Grouping headings with no content of their own.
    Container,
}

/// Fixed alias table from normalized heading text to section kind.
const ALIASES: &[(&str, Kind)] = &[
    ("project information", Kind::Required(RequiredSection::ProjectInformation)),
    ("project info", Kind::Required(RequiredSection::ProjectInformation)),
    ("computational resource budget", Kind::Required(RequiredSection::Budget)),
    ("resource budget", Kind::Required(RequiredSection::Budget)),
    ("budget", Kind::Container),
    ("type ii subsystem rate", Kind::Required(RequiredSection::Rate)),
    ("type ii rate", Kind::Required(RequiredSection::Rate)),
    ("subsystem rate", Kind::Required(RequiredSection::Rate)),
    ("point rate", Kind::Required(RequiredSection::Rate)),
    ("rate", Kind::Required(RequiredSection::Rate)),
    ("time limit", Kind::Required(RequiredSection::TimeLimit)),
    ("time limits", Kind::Required(RequiredSection::TimeLimit)),
    ("agent configuration", Kind::Required(RequiredSection::AgentConfiguration)),
    ("agent roster", Kind::Required(RequiredSection::AgentConfiguration)),
    ("accuracy requirements", Kind::Required(RequiredSection::AccuracyRequirements)),
    ("accuracy", Kind::Required(RequiredSection::AccuracyRequirements)),
    ("available hardware", Kind::Required(RequiredSection::AvailableHardware)),
    ("hardware", Kind::Required(RequiredSection::AvailableHardware)),
    ("peak performance", Kind::Required(RequiredSection::PeakPerformance)),
    ("theoretical peak", Kind::Required(RequiredSection::PeakPerformance)),
    ("input output type", Kind::IoType),
    ("value type", Kind::IoType),
    ("priorities", Kind::Priorities),
    ("github integration", Kind::Publishing),
    ("publishing", Kind::Publishing),
    ("security requirements", Kind::Security),
    ("security", Kind::Security),
    ("forbidden libraries", Kind::Prohibitions),
    ("prohibitions", Kind::Prohibitions),
    ("auto generated information", Kind::AutoGenerated),
    ("requirements definition document", Kind::Container),
];

static HEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(#{1,6})\s+(.*?)\s*#*\s*$").unwrap());
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9][0-9,]*(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?").unwrap());
static DURATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*([0-9]+(?:\.[0-9]+)?)\s*(min(?:utes?)?|m|h(?:ours?)?|hr)?\b").unwrap()
});
static FACTOR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[\sx×*])([0-9]*\.?[0-9]+)\s*(?:x|×|\*)").unwrap()
});
static ROSTER_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(PM|SE|PG|CD)\s*(?:(?:x|×|\*|:)\s*([0-9]+))?$").unwrap()
});
static GPUS_PER_NODE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)([0-9]+)\s*GPUs?\s+per\s+node").unwrap());
static PERF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)([0-9][0-9,]*(?:\.[0-9]+)?)\s*(TFLOPS|GFLOPS)?").unwrap());
static BACKTICKED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"`([^`]+)`").unwrap());
static CHECKBOX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[( |x|X)\]\s*(.*)$").unwrap());

struct Section {
    title: String,
    body: Vec<String>,
}

fn normalize_heading(title: &str) -> String {
    let mut t = unescape(title).to_lowercase();
    // Drop parenthesized qualifiers such as "(Jobs)" or "(Filled by PM)".
    while let (Some(a), Some(b)) = (t.find('('), t.find(')')) {
        if b < a {
            break;
        }
        t.replace_range(a..=b, " ");
    }
    t.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn classify(title: &str) -> Option<Kind> {
    let norm = normalize_heading(title);
    ALIASES.iter().find(|(a, _)| *a == norm).map(|(_, k)| *k)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(&n) = chars.peek() {
                if n.is_ascii_punctuation() {
                    out.push(n);
                    chars.next();
                    continue;
                }
            }
        }
        out.push(c);
    }
    out
}

/// Strips list markers and emphasis from a body line.
fn clean_line(line: &str) -> String {
    let t = line.trim();
    let t = t
        .strip_prefix("* ")
        .or_else(|| t.strip_prefix("- "))
        .or_else(|| t.strip_prefix("+ "))
        .unwrap_or(t);
    unescape(&t.replace("**", "")).trim().to_string()
}

fn key_value(line: &str) -> Option<(String, String)> {
    let l = clean_line(line);
    let (k, v) = l.split_once(':')?;
    Some((k.trim().to_lowercase(), v.trim().to_string()))
}

fn checkbox(line: &str) -> Option<(bool, String)> {
    let l = clean_line(line);
    let c = CHECKBOX.captures(&l)?;
    Some((c[1].eq_ignore_ascii_case("x"), c[2].trim().to_string()))
}

fn parse_decimal(text: &str) -> Option<Decimal> {
    let m = NUMBER.find(text)?;
    let raw = m.as_str().replace(',', "");
    Decimal::from_str(&raw)
        .or_else(|_| Decimal::from_scientific(&raw))
        .ok()
}

fn split_sections(doc: &str) -> Vec<Section> {
    let mut sections = Vec::new();
    let mut current = Section { title: String::new(), body: Vec::new() };
    let mut in_fence = false;
    for line in doc.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            current.body.push(line.to_string());
            continue;
        }
        if !in_fence {
            if let Some(c) = HEADING.captures(line) {
                sections.push(std::mem::replace(
                    &mut current,
                    Section { title: c[2].to_string(), body: Vec::new() },
                ));
                continue;
            }
        }
        current.body.push(line.to_string());
    }
    sections.push(current);
    sections
}

fn has_content(lines: &[String]) -> bool {
    lines.iter().any(|l| {
        let t = l.trim();
        !t.is_empty() && t != "---" && !t.starts_with("```")
    })
}

fn malformed(section: RequiredSection) -> RequirementsError {
    RequirementsError::MalformedSection(section.name().to_string())
}

/// Parses a headed requirements document into a [`RequirementSpec`].
pub fn parse_requirements(doc: &str) -> Result<RequirementSpec, RequirementsError> {
    if doc.trim().is_empty() {
        return Err(RequirementsError::EmptyDocument);
    }

    let mut grouped: BTreeMap<Kind, Vec<String>> = BTreeMap::new();
    let mut spec = RequirementSpec::default();
    let mut all_lines: Vec<String> = Vec::new();

    for section in split_sections(doc) {
        all_lines.extend(section.body.iter().cloned());
        match classify(&section.title) {
            Some(kind) => grouped.entry(kind).or_default().extend(section.body),
            None => {
                let body = section.body.join("\n").trim().to_string();
                if !section.title.is_empty() && !body.is_empty() {
                    spec.notes.push(Note { heading: unescape(section.title.trim()), body });
                }
            }
        }
    }

    let mut found: Vec<RequiredSection> = Vec::new();
    for (kind, lines) in &grouped {
        match kind {
            Kind::Required(req) => {
                if parse_required(*req, lines, &mut spec)? {
                    found.push(*req);
                }
            }
            Kind::IoType => {
                if let Some((_, text)) = lines.iter().filter_map(|l| checkbox(l)).find(|(on, _)| *on) {
                    if let Some(w) = text.split_whitespace().next() {
                        spec.accuracy.value_type = w.to_lowercase();
                    }
                } else if let Some((_, v)) = lines.iter().filter_map(|l| key_value(l)).find(|(k, _)| k == "type") {
                    spec.accuracy.value_type = v.to_lowercase();
                }
            }
            Kind::Priorities => {
                spec.priorities = lines
                    .iter()
                    .filter_map(|l| checkbox(l))
                    .filter(|(on, _)| *on)
                    .map(|(_, t)| slug(&t))
                    .filter(|t| !t.is_empty())
                    .collect();
            }
            Kind::Publishing => {
                if let Some((on, _)) = lines
                    .iter()
                    .filter_map(|l| checkbox(l))
                    .find(|(_, t)| t.to_lowercase().contains("use enabled") || t.to_lowercase().contains("enabled"))
                {
                    spec.publish.enabled = on;
                }
            }
            Kind::Security => {
                for l in lines {
                    if l.to_lowercase().contains("anonymiz") {
                        spec.publish.anonymize = checkbox(l).map(|(on, _)| on).unwrap_or(true);
                    }
                }
            }
            Kind::Prohibitions => {
                for l in lines {
                    let c = clean_line(l);
                    if c.is_empty() || c.to_lowercase().contains("prohibit") || c.starts_with("```") {
                        continue;
                    }
                    push_library(&mut spec.forbidden_libraries, c.trim_matches('`'));
                }
            }
            Kind::AutoGenerated | Kind::Container => {}
        }
    }

    // Prohibitions are stated in prose anywhere in the document.
    for l in &all_lines {
        if l.to_lowercase().contains("prohibit") {
            for c in BACKTICKED.captures_iter(l) {
                push_library(&mut spec.forbidden_libraries, &c[1]);
            }
        }
    }

    if !found.contains(&RequiredSection::PeakPerformance) {
        spec.hardware.peak_gflops_node =
            spec.hardware.peak_gflops_per_gpu * f64::from(spec.hardware.gpus_per_node.max(1));
    }
    spec.missing_items = REQUIRED_SECTIONS
        .iter()
        .filter(|s| !found.contains(s))
        .map(|s| s.name().to_string())
        .collect();
    Ok(spec)
}

fn push_library(list: &mut Vec<String>, name: &str) {
    let name = name.trim();
    if name.is_empty() {
        return;
    }
    if !list.iter().any(|l| l.eq_ignore_ascii_case(name)) {
        list.push(name.to_string());
    }
}

fn slug(text: &str) -> String {
    let head = text.split('(').next().unwrap_or("");
    head.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("-")
}

/// Returns whether the section yielded its data.
fn parse_required(
    section: RequiredSection,
    lines: &[String],
    spec: &mut RequirementSpec,
) -> Result<bool, RequirementsError> {
    if !has_content(lines) {
        return Ok(false);
    }
    match section {
        RequiredSection::ProjectInformation => {
            let name = lines
                .iter()
                .filter_map(|l| key_value(l))
                .find(|(k, _)| k == "project name" || k == "name");
            match name {
                Some((_, v)) if !v.is_empty() => {
                    spec.project_name = v;
                    Ok(true)
                }
                _ => Ok(false),
            }
        }
        RequiredSection::Budget => {
            let mut budget: [Option<Decimal>; 3] = [None; 3];
            for (k, v) in lines.iter().filter_map(|l| key_value(l)) {
                let slot = if k.starts_with("min") {
                    0
                } else if k.starts_with("ref") {
                    1
                } else if k.starts_with("max") {
                    2
                } else {
                    continue;
                };
                budget[slot] = Some(parse_decimal(&v).ok_or_else(|| malformed(section))?);
            }
            match budget {
                [Some(min), Some(reference), Some(max)] => {
                    spec.budget = Budget { min_points: min, reference_points: reference, max_points: max };
                    Ok(true)
                }
                _ => Ok(false),
            }
        }
        RequiredSection::Rate => {
            let text = lines.iter().map(|l| clean_line(l)).collect::<Vec<_>>().join(" ");
            let rate = if let Some((_, v)) = lines
                .iter()
                .filter_map(|l| key_value(l))
                .find(|(k, _)| k.contains("rate"))
            {
                parse_decimal(&v)
            } else if let Some(c) = FACTOR.captures(&text) {
                Decimal::from_str(&c[1]).ok()
            } else {
                parse_decimal(&text)
            };
            match rate {
                Some(r) => {
                    spec.point_rate = r;
                    Ok(true)
                }
                None => Err(malformed(section)),
            }
        }
        RequiredSection::TimeLimit => {
            let mut limits: [Option<u32>; 3] = [None; 3];
            for (k, v) in lines.iter().filter_map(|l| key_value(l)) {
                let slot = if k.starts_with("min") {
                    0
                } else if k.starts_with("ref") {
                    1
                } else if k.starts_with("max") {
                    2
                } else {
                    continue;
                };
                limits[slot] = Some(parse_minutes(&v).ok_or_else(|| malformed(section))?);
            }
            match limits {
                [Some(min), Some(reference), Some(max)] => {
                    spec.time_limits = TimeLimits { min, reference, max };
                    Ok(true)
                }
                _ => Ok(false),
            }
        }
        RequiredSection::AgentConfiguration => {
            let mut roster = BTreeMap::new();
            for l in lines {
                let c = clean_line(l);
                if let Some(cap) = ROSTER_LINE.captures(&c) {
                    let role = Role::from_str(&cap[1].to_uppercase()).map_err(|_| malformed(section))?;
                    let n = match cap.get(2) {
                        Some(m) => m.as_str().parse::<u32>().map_err(|_| malformed(section))?,
                        None => 1,
                    };
                    *roster.entry(role).or_insert(0) += n;
                }
            }
            if roster.is_empty() {
                return Ok(false);
            }
            spec.agent_roster = AgentRoster(roster);
            Ok(true)
        }
        RequiredSection::AccuracyRequirements => {
            let mut acc = Accuracy { value_type: spec.accuracy.value_type.clone(), ..Accuracy::default() };
            for l in lines {
                let lower = l.to_lowercase();
                if let Some((k, v)) = key_value(l) {
                    if k.contains("tolerance") {
                        acc.tolerance = if v.to_lowercase().contains("pm") {
                            Tolerance::PmAssigned
                        } else {
                            let d = parse_decimal(&v).ok_or_else(|| malformed(section))?;
                            Tolerance::Value(d.to_string().parse().map_err(|_| malformed(section))?)
                        };
                        continue;
                    }
                    if k.contains("metric") {
                        acc.error_metric = v;
                        continue;
                    }
                }
                if lower.contains("pm shall set") {
                    acc.tolerance = Tolerance::PmAssigned;
                }
            }
            spec.accuracy.error_metric = acc.error_metric;
            spec.accuracy.tolerance = acc.tolerance;
            Ok(true)
        }
        RequiredSection::AvailableHardware => {
            let mut gpus = None;
            for l in lines {
                let c = clean_line(l);
                if let Some(cap) = GPUS_PER_NODE.captures(&c) {
                    if checkbox(l).map(|(on, _)| on).unwrap_or(true) {
                        gpus = cap[1].parse::<u32>().ok();
                    }
                } else if let Some((k, v)) = key_value(l) {
                    if k.contains("gpus") {
                        gpus = Some(
                            parse_decimal(&v)
                                .and_then(|d| d.to_string().parse().ok())
                                .ok_or_else(|| malformed(section))?,
                        );
                    }
                }
            }
            match gpus {
                Some(g) => {
                    spec.hardware.gpus_per_node = g;
                    Ok(true)
                }
                None => Ok(false),
            }
        }
        RequiredSection::PeakPerformance => {
            let mut per_gpu = None;
            let mut node = None;
            for (k, v) in lines.iter().filter_map(|l| key_value(l)) {
                let value = parse_gflops(&v).ok_or_else(|| malformed(section))?;
                if k.contains("gpu") {
                    per_gpu = Some(value);
                } else if k.contains("node") {
                    node = Some(value);
                }
            }
            let Some(per_gpu) = per_gpu else { return Ok(false) };
            spec.hardware.peak_gflops_per_gpu = per_gpu;
            spec.hardware.peak_gflops_node =
                node.unwrap_or(per_gpu * f64::from(spec.hardware.gpus_per_node.max(1)));
            Ok(true)
        }
    }
}

fn parse_minutes(text: &str) -> Option<u32> {
    let c = DURATION.captures(text)?;
    let value: f64 = c[1].parse().ok()?;
    let unit = c.get(2).map(|m| m.as_str().to_lowercase()).unwrap_or_default();
    let minutes = if unit.starts_with('h') { value * 60.0 } else { value };
    if minutes.fract() != 0.0 || minutes < 0.0 {
        return None;
    }
    Some(minutes as u32)
}

fn parse_gflops(text: &str) -> Option<f64> {
    let c = PERF.captures(text)?;
    let value: f64 = c[1].replace(',', "").parse().ok()?;
    let tera = c.get(2).is_some_and(|u| u.as_str().eq_ignore_ascii_case("tflops"));
    Some(if tera { value * 1000.0 } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::SAMPLE_REQUIREMENTS;
    use crate::requirements::{DEFAULT_PEAK_GFLOPS_PER_GPU, DEFAULT_POINT_RATE};

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn listing_fields() {
        let spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
        assert_eq!(spec.project_name, "GEMM_v0_6_10_multi_ex1");
        assert_eq!(spec.budget.min_points, d("100"));
        assert_eq!(spec.budget.reference_points, d("500"));
        assert_eq!(spec.budget.max_points, d("1000"));
        assert_eq!(spec.point_rate, d("0.007"));
        assert_eq!(spec.time_limits, TimeLimits { min: 120, reference: 150, max: 180 });
        assert_eq!(spec.agent_roster.count(Role::PM), 1);
        assert_eq!(spec.agent_roster.count(Role::SE), 1);
        assert_eq!(spec.agent_roster.count(Role::PG), 3);
        assert_eq!(spec.agent_roster.count(Role::CD), 1);
        assert_eq!(spec.forbidden_libraries, vec!["cuBLAS", "MKL"]);
        assert_eq!(spec.hardware.gpus_per_node, 4);
        assert_eq!(spec.accuracy.value_type, "double");
        assert_eq!(spec.accuracy.tolerance, Tolerance::PmAssigned);
        assert_eq!(
            spec.priorities,
            vec!["accuracy-assurance", "maximization-of-throughput", "improvement-of-scalability"]
        );
        assert!(spec.publish.enabled);
        assert!(spec.publish.anonymize);
    }

    #[test]
    fn listing_defaults_peak_and_reports_it() {
        let spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
        assert_eq!(spec.hardware.peak_gflops_per_gpu, DEFAULT_PEAK_GFLOPS_PER_GPU);
        assert_eq!(spec.hardware.peak_gflops_node, 31200.0);
        assert_eq!(spec.missing_items, vec!["Peak Performance"]);
        assert_eq!(spec.point_rate, DEFAULT_POINT_RATE);
    }

    #[test]
    fn unrecognized_sections_are_notes() {
        let spec = parse_requirements(SAMPLE_REQUIREMENTS).unwrap();
        assert!(spec.notes.iter().any(|n| n.heading == "Target Files"));
        assert!(spec.notes.iter().any(|n| n.heading == "Instructions for All Agents"));
    }

    #[test]
    fn empty_document() {
        assert_eq!(parse_requirements(""), Err(RequirementsError::EmptyDocument));
        assert_eq!(parse_requirements("  \n\t\n"), Err(RequirementsError::EmptyDocument));
    }

    #[test]
    fn non_numeric_budget_is_malformed() {
        let doc = SAMPLE_REQUIREMENTS.replace("**Maximum**: 1,000 points", "**Maximum**: plenty");
        assert_eq!(
            parse_requirements(&doc),
            Err(RequirementsError::MalformedSection("Computational Resource Budget".into()))
        );
    }

    /// Checklist oracle: compare the headings present in the text against
    /// the required-section list, independently of the parser's grouping.
    fn missing_by_checklist(doc: &str) -> Vec<String> {
        let headings: Vec<String> = doc
            .lines()
            .filter(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_lowercase())
            .collect();
        let present = |needles: &[&str]| headings.iter().any(|h| needles.iter().any(|n| h.contains(n)));
        let mut out = Vec::new();
        let table: [(&str, &[&str]); 8] = [
            ("Project Information", &["project information"]),
            ("Computational Resource Budget", &["computational resource budget"]),
            ("Subsystem Rate", &["rate"]),
            ("Time Limit", &["time limit"]),
            ("Agent Configuration", &["agent configuration"]),
            ("Accuracy Requirements", &["accuracy requirements"]),
            ("Available Hardware", &["available hardware"]),
            ("Peak Performance", &["peak performance"]),
        ];
        for (name, needles) in table {
            if !present(needles) {
                out.push(name.to_string());
            }
        }
        out
    }

    #[test]
    fn deleted_accuracy_section_is_missing() {
        let start = SAMPLE_REQUIREMENTS.find("#### Accuracy Requirements").unwrap();
        let end = SAMPLE_REQUIREMENTS.find("### Budget (Jobs)").unwrap();
        let doc = format!("{}{}", &SAMPLE_REQUIREMENTS[..start], &SAMPLE_REQUIREMENTS[end..]);
        let spec = parse_requirements(&doc).unwrap();
        assert!(spec.missing_items.contains(&"Accuracy Requirements".to_string()));
        assert_eq!(spec.missing_items, missing_by_checklist(&doc));
        assert_eq!(missing_by_checklist(SAMPLE_REQUIREMENTS), vec!["Peak Performance"]);
    }

    #[test]
    fn explicit_peak_and_tolerance() {
        let doc = "# Doc\n## Peak Performance\n* **Per GPU**: 7.8 TFLOPS\n\
                   ## Accuracy Requirements\n* **Tolerance**: 1e-10\n* **Error Metric**: max-abs\n";
        let spec = parse_requirements(doc).unwrap();
        assert_eq!(spec.hardware.peak_gflops_per_gpu, 7800.0);
        assert_eq!(spec.accuracy.tolerance, Tolerance::Value(1e-10));
        assert_eq!(spec.accuracy.error_metric, "max-abs");
        assert!(!spec.missing_items.contains(&"Peak Performance".to_string()));
        assert!(spec.missing_items.contains(&"Computational Resource Budget".to_string()));
    }

    #[test]
    fn hours_are_converted() {
        assert_eq!(parse_minutes("2.5h"), Some(150));
        assert_eq!(parse_minutes("120 min (2h)"), Some(120));
        assert_eq!(parse_minutes("soon"), None);
    }

    #[test]
    fn roster_variants() {
        let doc = "## Agent Configuration\n```\nPM\nSE x 2\npg×3\nCD\n```\n";
        let spec = parse_requirements(doc).unwrap();
        assert_eq!(spec.agent_roster.count(Role::SE), 2);
        assert_eq!(spec.agent_roster.count(Role::PG), 3);
    }

    #[test]
    fn standalone_forbidden_section() {
        let doc = "## Forbidden Libraries\n* cuBLAS\n* `MKL`\n* mkl\n";
        let spec = parse_requirements(doc).unwrap();
        assert_eq!(spec.forbidden_libraries, vec!["cuBLAS", "MKL"]);
    }
}
