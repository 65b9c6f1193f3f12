//! Candidate versions, the append-only ChangeLog and its SOTA pointer.

mod search;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::telemetry::Tick;

pub use search::{next_params, GridSearch, ParamDim, ParamSpace, RandomSearch, SearchStrategy, StrategyKind};

/// Tuning parameters by name, e.g. `BLOCK_M -> 64`.
pub type Params = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TuningError {
    #[error("version {0} is already registered")]
    DuplicateVersion(Version),
    #[error("unknown version {0}")]
    UnknownVersion(Version),
    #[error("illegal status change {from:?} -> {to:?} for {version}")]
    IllegalTransition { version: Version, from: CandidateStatus, to: CandidateStatus },
    #[error("a Valid result needs metrics")]
    MissingMetrics,
    #[error("parameter space exhausted")]
    ExhaustedSpace,
    #[error("parameter `{0}` has no values")]
    EmptyDimension(String),
    #[error("bad version string `{0}`")]
    BadVersion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version {
    pub major: u32,
    pub minor: u32,
    pub patch: u32,
}

impl Version {
    pub fn new(major: u32, minor: u32, patch: u32) -> Self {
        Self { major, minor, patch }
    }

    /// Accepts `1.4.0` and `v1.4.0`.
    pub fn parse(s: &str) -> Result<Self, TuningError> {
        let bad = || TuningError::BadVersion(s.to_string());
        let t = s.trim();
        let t = t.strip_prefix('v').unwrap_or(t);
        let parts: Vec<u32> = t.split('.').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        match parts[..] {
            [major, minor, patch] => Ok(Self { major, minor, patch }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for Version {
    type Err = TuningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CandidateStatus {
    Pending,
    Valid,
    Invalid,
    Failed,
}

impl fmt::Display for CandidateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl CandidateStatus {
    pub fn can_become(self, to: CandidateStatus) -> bool {
        use CandidateStatus::*;
        matches!((self, to), (Pending, Valid | Invalid | Failed) | (Valid, Invalid) | (Invalid, Invalid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gflops: f64,
    pub efficiency_pct: f64,
    pub error_norm: f64,
    pub elapsed_s: Decimal,
    pub gpus: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVersion {
    pub version: Version,
    pub parent: Option<Version>,
    pub params: Params,
    pub source_ref: String,
    pub label: String,
    pub author: String,
    pub status: CandidateStatus,
    pub metrics: Option<Metrics>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: Tick,
    pub candidate: CandidateVersion,
}

/// Append-only history. Each registration or status change appends a full
/// snapshot; the latest snapshot per version is its current state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChangeLog {
    entries: Vec<Snapshot>,
    latest: BTreeMap<Version, usize>,
    /// Registration rank, used to break SOTA ties.
    order: BTreeMap<Version, usize>,
    sota: Option<Version>,
}

impl ChangeLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a log from its snapshots, validating every step.
    pub fn from_snapshots(snapshots: impl IntoIterator<Item = Snapshot>) -> Result<Self, TuningError> {
        let mut log = Self::new();
        for s in snapshots {
            log.apply(s)?;
        }
        Ok(log)
    }

    pub fn apply(&mut self, snap: Snapshot) -> Result<(), TuningError> {
        let v = snap.candidate.version.clone();
        match self.latest.get(&v) {
            None => {
                if snap.candidate.status != CandidateStatus::Pending {
                    return Err(TuningError::IllegalTransition {
                        version: v,
                        from: CandidateStatus::Pending,
                        to: snap.candidate.status,
                    });
                }
                self.order.insert(v.clone(), self.order.len());
            }
            Some(&i) => {
                let from = self.entries[i].candidate.status;
                if !from.can_become(snap.candidate.status) {
                    return Err(TuningError::IllegalTransition { version: v, from, to: snap.candidate.status });
                }
            }
        }
        if snap.candidate.status == CandidateStatus::Valid && snap.candidate.metrics.is_none() {
            return Err(TuningError::MissingMetrics);
        }
        self.latest.insert(v, self.entries.len());
        self.entries.push(snap);
        self.sota = self.compute_sota();
        Ok(())
    }

    pub fn register_candidate(
        &mut self,
        tick: Tick,
        version: Version,
        parent: Option<Version>,
        params: Params,
        source_ref: impl Into<String>,
        label: impl Into<String>,
        author: impl Into<String>,
    ) -> Result<&CandidateVersion, TuningError> {
        if self.latest.contains_key(&version) {
            return Err(TuningError::DuplicateVersion(version));
        }
        let candidate = CandidateVersion {
            version: version.clone(),
            parent,
            params,
            source_ref: source_ref.into(),
            label: label.into(),
            author: author.into(),
            status: CandidateStatus::Pending,
            metrics: None,
            note: None,
        };
        self.apply(Snapshot { tick, candidate })?;
        Ok(self.get(&version).unwrap())
    }

    /// Appends a status change. `metrics` replaces the recorded metrics when given.
    pub fn record_result(
        &mut self,
        tick: Tick,
        version: &Version,
        metrics: Option<Metrics>,
        verdict: CandidateStatus,
        note: Option<String>,
    ) -> Result<&ChangeLog, TuningError> {
        let mut candidate = self.get(version).ok_or_else(|| TuningError::UnknownVersion(version.clone()))?.clone();
        candidate.status = verdict;
        if metrics.is_some() {
            candidate.metrics = metrics;
        }
        if note.is_some() {
            candidate.note = note;
        }
        self.apply(Snapshot { tick, candidate })?;
        Ok(self)
    }

    pub fn mark_invalid(&mut self, tick: Tick, version: &Version, reason: &str) -> Result<&ChangeLog, TuningError> {
        self.record_result(tick, version, None, CandidateStatus::Invalid, Some(reason.to_string()))
    }

    pub fn get(&self, version: &Version) -> Option<&CandidateVersion> {
        self.latest.get(version).map(|&i| &self.entries[i].candidate)
    }

    pub fn entries(&self) -> &[Snapshot] {
        &self.entries
    }

    /// Current state of every version in registration order.
    pub fn current(&self) -> Vec<&CandidateVersion> {
        let mut vs: Vec<(&usize, &Version)> = self.order.iter().map(|(v, r)| (r, v)).collect();
        vs.sort();
        vs.into_iter().filter_map(|(_, v)| self.get(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn sota(&self) -> Option<(Version, f64)> {
        let v = self.sota.as_ref()?;
        let g = self.get(v)?.metrics.as_ref()?.gflops;
        Some((v.clone(), g))
    }

    pub fn sota_candidate(&self) -> Option<&CandidateVersion> {
        self.sota.as_ref().and_then(|v| self.get(v))
    }

    fn compute_sota(&self) -> Option<Version> {
        let mut best: Option<(&Version, f64, usize)> = None;
        for (v, &rank) in &self.order {
            let c = self.get(v)?;
            if c.status != CandidateStatus::Valid {
                continue;
            }
            let g = c.metrics.as_ref()?.gflops;
            let better = match best {
                None => true,
                Some((_, bg, br)) => g > bg || (g == bg && rank < br),
            };
            if better {
                best = Some((v, g, rank));
            }
        }
        best.map(|(v, _, _)| v.clone())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn metrics(g: f64) -> Metrics {
        Metrics {
            gflops: g,
            efficiency_pct: 100.0 * g / 7800.0,
            error_norm: 0.0,
            elapsed_s: Decimal::ONE,
            gpus: 4,
        }
    }

    fn v(s: &str) -> Version {
        Version::parse(s).unwrap()
    }

    fn reg(log: &mut ChangeLog, tick: Tick, ver: &str, parent: Option<&str>, label: &str) {
        log.register_candidate(tick, v(ver), parent.map(v), Params::new(), format!("candidates/v{ver}"), label, "PG1.1")
            .unwrap();
    }

    #[test]
    fn version_parse_and_display() {
        assert_eq!(v("v1.4.0"), Version::new(1, 4, 0));
        assert_eq!(v("1.4.0").to_string(), "1.4.0");
        assert!(Version::parse("1.4").is_err());
        assert!(v("1.10.0") > v("1.9.3"));
    }

    #[test]
    fn register_and_lineage() {
        let mut log = ChangeLog::new();
        let mut p = Params::new();
        p.insert("BLOCK".into(), 32);
        let c = log.register_candidate(0, v("1.0.0"), None, p, "candidates/v1.0.0", "Baseline", "PG1.1").unwrap();
        assert_eq!(c.status, CandidateStatus::Pending);
        assert_eq!(
            log.register_candidate(1, v("1.0.0"), None, Params::new(), "", "x", "PG1.2"),
            Err(TuningError::DuplicateVersion(v("1.0.0")))
        );
        reg(&mut log, 2, "1.0.1", Some("1.0.0"), "Warp optimization");
        assert_eq!(log.get(&v("1.0.1")).unwrap().parent, Some(v("1.0.0")));
    }

    #[test]
    fn invalidation_reverts_sota() {
        let mut log = ChangeLog::new();
        assert_eq!(log.sota(), None);
        for (i, (ver, g)) in [("1.0.0", 1803.7), ("1.0.1", 1888.5), ("1.2.1", 2185.2), ("1.3.0", 5868.9)]
            .into_iter()
            .enumerate()
        {
            reg(&mut log, i as Tick, ver, None, "x");
            log.record_result(i as Tick, &v(ver), Some(metrics(g)), CandidateStatus::Valid, None).unwrap();
        }
        assert_eq!(log.sota().unwrap().0, v("1.3.0"));
        log.mark_invalid(5, &v("1.3.0"), "cuBLAS").unwrap();
        assert_eq!(log.sota(), Some((v("1.2.1"), 2185.2)));
        reg(&mut log, 6, "1.4.0", None, "Double buffering");
        log.record_result(7, &v("1.4.0"), Some(metrics(3365.2)), CandidateStatus::Valid, None).unwrap();
        assert_eq!(log.sota(), Some((v("1.4.0"), 3365.2)));
    }

    #[test]
    fn illegal_transitions() {
        let mut log = ChangeLog::new();
        reg(&mut log, 0, "1.5.0", None, "Bigger tiling sizes");
        log.record_result(1, &v("1.5.0"), None, CandidateStatus::Failed, None).unwrap();
        assert!(matches!(
            log.record_result(2, &v("1.5.0"), Some(metrics(1.0)), CandidateStatus::Valid, None),
            Err(TuningError::IllegalTransition { .. })
        ));
        assert_eq!(
            log.record_result(2, &v("9.9.9"), None, CandidateStatus::Valid, None).unwrap_err(),
            TuningError::UnknownVersion(v("9.9.9"))
        );
        reg(&mut log, 3, "1.5.1", None, "Boundary condition");
        assert_eq!(
            log.record_result(3, &v("1.5.1"), None, CandidateStatus::Valid, None).unwrap_err(),
            TuningError::MissingMetrics
        );
    }

    #[test]
    fn all_invalid_has_no_sota_and_ties_go_to_earliest() {
        let mut log = ChangeLog::new();
        reg(&mut log, 0, "1.0.0", None, "x");
        log.mark_invalid(0, &v("1.0.0"), "r").unwrap();
        assert_eq!(log.sota(), None);
        reg(&mut log, 1, "1.0.2", None, "x");
        reg(&mut log, 2, "1.0.1", None, "x");
        log.record_result(3, &v("1.0.1"), Some(metrics(10.0)), CandidateStatus::Valid, None).unwrap();
        log.record_result(4, &v("1.0.2"), Some(metrics(10.0)), CandidateStatus::Valid, None).unwrap();
        assert_eq!(log.sota().unwrap().0, v("1.0.2"));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register,
        Valid(usize, u32),
        Fail(usize),
        Invalidate(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Register),
            (0usize..20, 1u32..50).prop_map(|(i, g)| Op::Valid(i, g)),
            (0usize..20).prop_map(Op::Fail),
            (0usize..20).prop_map(Op::Invalidate),
        ]
    }

    proptest! {
        /// Replaying the snapshots reproduces the SOTA pointer after every step,
        /// and it matches a brute-force maximum over Valid entries.
        #[test]
        fn replay_reconstructs_sota(ops in proptest::collection::vec(op(), 1..60)) {
            let mut log = ChangeLog::new();
            let mut n = 0u32;
            let mut pointers = Vec::new();
            for (t, o) in ops.into_iter().enumerate() {
                let t = t as Tick;
                let ver = |i: usize| Version::new(1, 0, (i as u32) % n.max(1));
                let _ = match o {
                    Op::Register => {
                        n += 1;
                        log.register_candidate(t, Version::new(1, 0, n - 1), None, Params::new(), "", "x", "PG")
                            .map(|_| ())
                    }
                    Op::Valid(i, g) => log
                        .record_result(t, &ver(i), Some(metrics(f64::from(g))), CandidateStatus::Valid, None)
                        .map(|_| ()),
                    Op::Fail(i) => log.record_result(t, &ver(i), None, CandidateStatus::Failed, None).map(|_| ()),
                    Op::Invalidate(i) => log.mark_invalid(t, &ver(i), "x").map(|_| ()),
                };
                let brute = log
                    .current()
                    .into_iter()
                    .filter(|c| c.status == CandidateStatus::Valid)
                    .map(|c| c.metrics.as_ref().unwrap().gflops)
                    .fold(None, |a: Option<f64>, g| Some(a.map_or(g, |a| a.max(g))));
                prop_assert_eq!(log.sota().map(|s| s.1), brute);
                if log.entries().len() > pointers.len() {
                    pointers.push(log.sota());
                }
            }
            let mut replay = ChangeLog::new();
            let mut replayed = Vec::new();
            for s in log.entries().iter().cloned() {
                replay.apply(s).unwrap();
                replayed.push(replay.sota());
            }
            prop_assert_eq!(replayed, pointers);
            prop_assert_eq!(ChangeLog::from_snapshots(log.entries().to_vec()).unwrap(), log);
        }
    }
}
