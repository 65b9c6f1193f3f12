//! Brain backed by an HTTP chat-completion endpoint.
//!
//! The reply is plain text; every line of the form `ACTION <verb> ...` becomes
//! one action, everything else is ignored.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Action, Brain, CompactionPolicy, Decision, Observations, Role, StopReason, TerminateScope};
use crate::bus::{Message, Recipient};
use crate::exec::{lint_files, scan_anonymization, SourceFile};
use crate::roles::codegen;
use crate::tuning::{CandidateStatus, Params, Version};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteBrainConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: u64,
    pub compaction: CompactionPolicy,
}

impl Default for RemoteBrainConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "VIBEHPC_API_KEY".into(),
            timeout_s: 120,
            compaction: CompactionPolicy::default(),
        }
    }
}

pub struct RemoteBrain {
    config: RemoteBrainConfig,
    role: Role,
    http: ureq::Agent,
}

impl RemoteBrain {
    pub fn new(role: Role, config: RemoteBrainConfig) -> Self {
        let http: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        Self { config, role, http }
    }

    fn call(&self, context: &str, user: &str) -> Result<(String, Option<u64>), String> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": context},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.http.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| format!("{} endpoint: {e}", self.role))?;
        let v: Value = resp.body_mut().read_json().map_err(|e| format!("{} endpoint: malformed reply: {e}", self.role))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("{} endpoint: reply has no message content", self.role))?
            .to_string();
        let used = v.pointer("/usage/total_tokens").and_then(Value::as_u64);
        Ok((text, used))
    }
}

fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

fn user_turn(inbox: &[Message], obs: &Observations) -> String {
    let mut out = format!("Tick {}. You are {} ({}).\n", obs.tick, obs.me.id, obs.me.role);
    for j in obs.finished_jobs {
        out.push_str(&format!("Job {} for v{} finished: {:?} {:?}\n", j.id, j.version, j.outcome, j.outputs.metrics));
    }
    for (v, why) in obs.rejected {
        out.push_str(&format!("Submission of v{v} rejected: {why}\n"));
    }
    for m in inbox {
        out.push_str(&format!("{m}\n"));
    }
    out.push_str("Reply with ACTION lines.");
    out
}

impl Brain for RemoteBrain {
    fn decide(&mut self, context: &str, inbox: &[Message], obs: &Observations) -> Decision {
        let user = user_turn(inbox, obs);
        let sent = estimate_tokens(context) + estimate_tokens(&user);
        match self.call(context, &user).and_then(|(text, used)| {
            let actions = parse_actions(&text, obs)?;
            Ok((actions, used.unwrap_or(sent + estimate_tokens(&text))))
        }) {
            Ok((mut actions, tokens)) => {
                if actions.is_empty() {
                    actions.push(Action::NoOp);
                }
                Decision { actions, tokens, error: None }
            }
            Err(e) => Decision { actions: vec![Action::NoOp], tokens: 0, error: Some(e) },
        }
    }

    fn compaction_policy(&self) -> CompactionPolicy {
        self.config.compaction
    }
}

fn version(word: Option<&str>) -> Result<Version, String> {
    let w = word.ok_or("missing version")?;
    Version::parse(w).map_err(|e| e.to_string())
}

/// Parses the `ACTION` lines of a reply. Review verdicts are computed here
/// with the lint tools, against the on-disk prohibition list.
pub fn parse_actions(text: &str, obs: &Observations) -> Result<Vec<Action>, String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        i += 1;
        let Some(rest) = line.strip_prefix("ACTION ") else { continue };
        let mut words = rest.split_whitespace();
        let verb = words.next().unwrap_or("").to_ascii_lowercase();
        let action = match verb.as_str() {
            "send" => {
                let (head, body) = rest.split_once("::").ok_or("send needs `::` before the body")?;
                let to = head.split_whitespace().nth(1).ok_or("send needs a recipient")?;
                let to = if to.eq_ignore_ascii_case("broadcast") {
                    Recipient::Broadcast
                } else {
                    Recipient::Agent(to.to_string())
                };
                Action::SendMessage { to, body: body.trim().to_string() }
            }
            "generate" => {
                let version = version(words.next())?;
                let mut params = Params::new();
                let mut parent = None;
                let mut label = Vec::new();
                for w in words {
                    match w.split_once('=') {
                        Some(("parent", p)) => parent = Some(Version::parse(p).map_err(|e| e.to_string())?),
                        Some((k, v)) => {
                            params.insert(k.to_string(), v.parse().map_err(|_| format!("bad value for {k}"))?);
                        }
                        None => label.push(w),
                    }
                }
                let label = if label.is_empty() { "Baseline".to_string() } else { label.join(" ") };
                let mut sources = codegen::candidate_sources(&label, &params);
                if lines.get(i).is_some_and(|l| l.trim_start().starts_with("```")) {
                    let start = i + 1;
                    let end = (start..lines.len()).find(|&j| lines[j].trim_start().starts_with("```")).unwrap_or(lines.len());
                    let code = lines[start..end].join("\n") + "\n";
                    sources.retain(|f| f.name != codegen::KERNEL_FILE);
                    sources.insert(0, SourceFile::new(codegen::KERNEL_FILE, code));
                    i = end + 1;
                }
                Action::GenerateCandidate { version, parent, label, params, sources }
            }
            "submit" => Action::SubmitJob { version: version(words.next())? },
            "record" => {
                let version = version(words.next())?;
                let verdict = match words.next().map(str::to_ascii_lowercase).as_deref() {
                    Some("valid") => CandidateStatus::Valid,
                    Some("invalid") => CandidateStatus::Invalid,
                    Some("failed") => CandidateStatus::Failed,
                    other => return Err(format!("unknown verdict {other:?}")),
                };
                let note: Vec<&str> = words.collect();
                Action::RecordResult { version, verdict, note: (!note.is_empty()).then(|| note.join(" ")) }
            }
            "review" => {
                let version = version(words.next())?;
                let files = obs.sources.get(&version).cloned().unwrap_or_default();
                Action::ReviewCandidate {
                    lint: lint_files(&files, &obs.spec.forbidden_libraries),
                    anonymization: scan_anonymization(&files, obs.user_ids),
                    version,
                }
            }
            "publish" => Action::Publish { version: version(words.next())? },
            "target" => Action::SetAccuracyTarget {
                tolerance: words.next().and_then(|w| w.parse().ok()).ok_or("target needs a number")?,
            },
            "spawn" => Action::SpawnAgent { role: words.next().ok_or("spawn needs a role")?.parse()? },
            "invalidate" => {
                let version = version(words.next())?;
                Action::MarkInvalid { version, reason: words.collect::<Vec<_>>().join(" ") }
            }
            "report" => Action::EmitReport,
            "terminate" => {
                let scope = match words.next().map(str::to_ascii_lowercase).as_deref() {
                    Some("project") => TerminateScope::Project,
                    Some("self") => TerminateScope::SelfOnly,
                    other => return Err(format!("unknown terminate scope {other:?}")),
                };
                let reason = words.collect::<Vec<_>>().join(" ");
                let reason = if reason.is_empty() { StopReason::Other("requested".into()) } else { StopReason::Other(reason) };
                Action::Terminate { scope, reason }
            }
            "noop" => Action::NoOp,
            other => return Err(format!("unknown action `{other}`")),
        };
        out.push(action);
    }
    Ok(out)
}
