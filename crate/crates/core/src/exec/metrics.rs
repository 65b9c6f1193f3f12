//! `METRIC name=value` exchange format on job stdout.

use std::collections::BTreeMap;

use super::ExecError;

/// Collects every `METRIC a=1 b=2` line. At least one metric is required.
pub fn parse_metric_lines(stdout: &str) -> Result<BTreeMap<String, f64>, ExecError> {
    let mut out = BTreeMap::new();
    for line in stdout.lines() {
        let Some(rest) = line.trim().strip_prefix("METRIC ") else { continue };
        for pair in rest.split_whitespace() {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| ExecError::MetricParseError(format!("expected name=value, got `{pair}`")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| ExecError::MetricParseError(format!("non-numeric value for `{name}`: `{value}`")))?;
            out.insert(name.to_string(), v);
        }
    }
    if out.is_empty() {
        return Err(ExecError::MetricParseError("no METRIC lines in output".into()));
    }
    Ok(out)
}

pub fn format_metric(name: &str, value: f64) -> String {
    format!("METRIC {name}={value}")
}
