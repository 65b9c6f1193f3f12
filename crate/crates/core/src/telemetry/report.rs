//! Per-agent context usage over time.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::{EventBody, TelemetryEvent, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSeries {
    pub agent: String,
    /// `(tick, context_tokens)` after each change.
    pub points: Vec<(Tick, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionMarker {
    pub agent: String,
    pub tick: Tick,
    pub tokens_before: u64,
    pub tokens_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ContextUsageReport {
    pub generated_at: Tick,
    /// In order of each agent's first token activity.
    pub series: Vec<AgentSeries>,
    pub compactions: Vec<CompactionMarker>,
    /// Cumulative tokens charged per agent, compactions ignored.
    pub totals: BTreeMap<String, u64>,
}

impl ContextUsageReport {
    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series_for(&self, agent: &str) -> Option<&AgentSeries> {
        self.series.iter().find(|s| s.agent == agent)
    }

    pub fn compaction_count(&self, agent: &str) -> usize {
        self.compactions.iter().filter(|c| c.agent == agent).count()
    }
}

/// Builds the report from the events whose tick lies in `window` (all when `None`).
pub fn context_usage_report(events: &[TelemetryEvent], window: Option<RangeInclusive<Tick>>) -> ContextUsageReport {
    let inside = |t: Tick| window.as_ref().is_none_or(|w| w.contains(&t));
    let mut report = ContextUsageReport::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut push = |report: &mut ContextUsageReport, agent: &str, tick: Tick, tokens: u64| {
        let i = *index.entry(agent.to_string()).or_insert_with(|| {
            report.series.push(AgentSeries { agent: agent.to_string(), points: Vec::new() });
            report.series.len() - 1
        });
        report.series[i].points.push((tick, tokens));
    };
    for e in events {
        report.generated_at = report.generated_at.max(e.tick);
        if !inside(e.tick) {
            continue;
        }
        match &e.body {
            EventBody::TokenUsage { delta, total } => {
                push(&mut report, &e.agent, e.tick, *total);
                *report.totals.entry(e.agent.clone()).or_default() += delta;
            }
            EventBody::Compaction { tokens_before, tokens_after, .. } => {
                push(&mut report, &e.agent, e.tick, *tokens_after);
                report.compactions.push(CompactionMarker {
                    agent: e.agent.clone(),
                    tick: e.tick,
                    tokens_before: *tokens_before,
                    tokens_after: *tokens_after,
                });
            }
            _ => {}
        }
    }
    report
}

impl fmt::Display for ContextUsageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Context Usage Report (tick {})", self.generated_at)?;
        if self.series.is_empty() {
            return writeln!(f, "  no token activity");
        }
        for s in &self.series {
            let now = s.points.last().map_or(0, |p| p.1);
            writeln!(
                f,
                "  {:<6} context {:>7}  total {:>8}  compactions {}",
                s.agent,
                now,
                self.totals.get(&s.agent).copied().unwrap_or(0),
                self.compaction_count(&s.agent)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Role;
    use crate::telemetry::EventLog;

    #[test]
    fn empty_log_gives_empty_report() {
        assert!(context_usage_report(&[], None).is_empty());
    }

    #[test]
    fn one_crossing_one_marker() {
        let mut log = EventLog::in_memory();
        log.append(0, "PG1.1", EventBody::Spawn { role: Role::PG, requester: "PM".into(), compact_threshold: 100 })
            .unwrap();
        let mut total = 0;
        let mut crossing = None;
        for t in 1..=10u64 {
            total += 30;
            log.append(t, "PG1.1", EventBody::TokenUsage { delta: 30, total }).unwrap();
            if total >= 100 && crossing.is_none() {
                log.append(t, "PG1.1", EventBody::Compaction { tokens_before: total, tokens_after: 10, lossy: false, summary: String::new() })
                    .unwrap();
                crossing = Some(t);
                total = 10;
            }
        }
        let r = context_usage_report(log.events(), None);
        assert_eq!(r.compactions.len(), 1);
        assert_eq!(Some(r.compactions[0].tick), crossing);
        assert_eq!(r.totals["PG1.1"], 300);
        let s = r.series_for("PG1.1").unwrap();
        let drop = s.points.windows(2).position(|w| w[1].1 < w[0].1).unwrap();
        assert_eq!(s.points[drop + 1].0, crossing.unwrap());
    }

    #[test]
    fn window_limits_rows_but_not_order() {
        let mut log = EventLog::in_memory();
        log.append(1, "PM", EventBody::TokenUsage { delta: 1, total: 1 }).unwrap();
        log.append(2, "SE1", EventBody::TokenUsage { delta: 1, total: 1 }).unwrap();
        log.append(5, "PM", EventBody::TokenUsage { delta: 1, total: 2 }).unwrap();
        let r = context_usage_report(log.events(), Some(2..=5));
        assert_eq!(r.series.iter().map(|s| s.agent.as_str()).collect::<Vec<_>>(), ["SE1", "PM"]);
        assert!(r.to_string().contains("SE1"));
    }
}
