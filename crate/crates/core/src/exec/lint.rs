//! Forbidden-library and anonymization scans over candidate sources.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// One file of a candidate: kernel source, makefile, job script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub name: String,
    pub content: String,
}

impl SourceFile {
    pub fn new(name: impl Into<String>, content: impl Into<String>) -> Self {
        Self { name: name.into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitKind {
    Identifier,
    Header,
    LinkFlag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintViolation {
    /// Library name as spelled in the prohibition list.
    pub library: String,
    pub file: String,
    /// 1-based.
    pub line: usize,
    pub kind: HitKind,
    pub excerpt: String,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

/// Case-insensitive scan for prohibited library tokens used as identifier
/// prefixes (`cublasDgemm`), headers (`<cublas_v2.h>`) or link flags
/// (`-lcublas`, `libmkl_rt.so`). One hit per library per line.
pub fn lint_forbidden(source: &str, forbidden: &[String]) -> Vec<LintViolation> {
    lint_named("", source, forbidden)
}

pub fn lint_files(files: &[SourceFile], forbidden: &[String]) -> Vec<LintViolation> {
    files
        .iter()
        .flat_map(|f| lint_named(&f.name, &f.content, forbidden))
        .collect()
}

fn lint_named(file: &str, source: &str, forbidden: &[String]) -> Vec<LintViolation> {
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lower = line.to_lowercase();
        for lib in forbidden {
            let needle = lib.to_lowercase();
            if needle.is_empty() {
                continue;
            }
            if let Some(kind) = find_hit(&lower, &needle) {
                out.push(LintViolation {
                    library: lib.clone(),
                    file: file.to_string(),
                    line: idx + 1,
                    kind,
                    excerpt: line.trim().to_string(),
                });
            }
        }
    }
    out
}

fn find_hit(line: &str, needle: &str) -> Option<HitKind> {
    let mut start = 0;
    while let Some(pos) = line[start..].find(needle) {
        let at = start + pos;
        let before = &line[..at];
        let boundary = before.chars().next_back().is_none_or(|c| !is_word_char(c));
        let link = before.ends_with("-l") || before.ends_with("lib") && {
            let b = &before[..before.len() - 3];
            b.chars().next_back().is_none_or(|c| !is_word_char(c))
        };
        if boundary || link {
            return Some(if link {
                HitKind::LinkFlag
            } else if line.trim_start().starts_with("#include") {
                HitKind::Header
            } else {
                HitKind::Identifier
            });
        }
        start = at + needle.len();
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum AnonymizationFinding {
    UserId(String),
    AbsolutePath(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizationViolation {
    pub file: String,
    pub line: usize,
    pub finding: AnonymizationFinding,
}

static ABS_PATH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?:^|[\s"'=(:,])(/(?:home|Users|root|work|data|vol[0-9]*|groups?|scratch|mnt|lustre|gs)(?:/[^\s"'),;]*)?)"#,
    )
    .unwrap()
});

fn user_regex(user: &str) -> Regex {
    Regex::new(&format!(r"(?i)(?:^|[^A-Za-z0-9_]){}(?:$|[^A-Za-z0-9_])", regex::escape(user))).unwrap()
}

/// Looks for login user ids and machine-specific absolute paths.
pub fn scan_anonymization(files: &[SourceFile], user_ids: &[String]) -> Vec<AnonymizationViolation> {
    let users: Vec<(String, Regex)> = user_ids
        .iter()
        .filter(|u| !u.is_empty())
        .map(|u| (u.clone(), user_regex(u)))
        .collect();
    let mut out = Vec::new();
    for f in files {
        for (idx, line) in f.content.lines().enumerate() {
            for (u, re) in &users {
                if re.is_match(line) {
                    out.push(AnonymizationViolation {
                        file: f.name.clone(),
                        line: idx + 1,
                        finding: AnonymizationFinding::UserId(u.clone()),
                    });
                }
            }
            for c in ABS_PATH.captures_iter(line) {
                out.push(AnonymizationViolation {
                    file: f.name.clone(),
                    line: idx + 1,
                    finding: AnonymizationFinding::AbsolutePath(c[1].to_string()),
                });
            }
        }
    }
    out
}

/// Replaces user ids with `<user>` and absolute home-style paths with `<path>`.
pub fn anonymize(text: &str, user_ids: &[String]) -> String {
    let mut out = ABS_PATH
        .replace_all(text, |c: &regex::Captures| {
            let whole = &c[0];
            let path = &c[1];
            format!("{}<path>", &whole[..whole.len() - path.len()])
        })
        .into_owned();
    for u in user_ids.iter().filter(|u| !u.is_empty()) {
        let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(u))).unwrap();
        out = re.replace_all(&out, "<user>").into_owned();
    }
    out
}
