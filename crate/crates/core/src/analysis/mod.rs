//! Timer parsing and scaling statistics.
//!
//! A benchmark job writes a `timers` file with six lines, `key seconds`:
//!
//! ```text
//! construction 0.84
//! update 1.20
//! collocate 0.31
//! communicate 0.52
//! deliver 0.97
//! model_time 1.0
//! ```
//!
//! The four state-propagation phases (update, collocate, communicate,
//! deliver) add up to the propagation time; divided by the simulated model
//! time it gives the real-time factor. Seeds are aggregated per resource
//! count into means and standard errors.

mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ResolvedConfig, Scalar};
use crate::provenance::BenchmarkRecord;

pub use plot::{emit_plot, parse_table, render_svg, render_table, PlotFiles, PlotStyle, TableRow};

pub const TIMERS_FILE: &str = "timers";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("timer file: missing `{0}`")]
    MissingField(String),
    #[error("timer file: `{0}` appears more than once")]
    DuplicateField(String),
    #[error("timer file: unknown key `{0}`")]
    UnknownField(String),
    #[error("timer file: cannot read line `{0}`")]
    Malformed(String),
    #[error("timer file: `{field}` is negative ({value})")]
    Negative { field: String, value: f64 },
    #[error("timer file: model_time must be positive, got {0}")]
    NonPositiveModelTime(f64),
    #[error("phase fractions are undefined when the propagation time is zero")]
    ZeroPropagation,
    #[error("no scaling points to aggregate")]
    EmptyGroup,
    #[error("analyses share no resource count")]
    NoOverlap,
    #[error("baseline mean of `{metric}` at {resource_count} resources is zero")]
    ZeroBaseline { metric: Metric, resource_count: u32 },
    #[error("record {record}: {message}")]
    Record { record: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// The four phases of state propagation, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Update,
    Collocate,
    Communicate,
    Deliver,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Update, Phase::Collocate, Phase::Communicate, Phase::Deliver];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Update => "update",
            Phase::Collocate => "collocate",
            Phase::Communicate => "communicate",
            Phase::Deliver => "deliver",
        }
    }
}

/// Anything with a mean and standard error in an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Metric {
    Phase(Phase),
    Construction,
    Propagation,
}

impl Metric {
    /// Table order: the four phases, construction, propagation.
    pub const ALL: [Metric; 6] = [
        Metric::Phase(Phase::Update),
        Metric::Phase(Phase::Collocate),
        Metric::Phase(Phase::Communicate),
        Metric::Phase(Phase::Deliver),
        Metric::Construction,
        Metric::Propagation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Phase(p) => p.name(),
            Metric::Construction => "construction",
            Metric::Propagation => "propagation",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.name().to_string()
    }
}

impl TryFrom<String> for Metric {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Metric::from_name(&s).ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimers {
    pub construction: f64,
    pub update: f64,
    pub collocate: f64,
    pub communicate: f64,
    pub deliver: f64,
    pub model_time: f64,
}

const TIMER_KEYS: [&str; 6] = ["construction", "update", "collocate", "communicate", "deliver", "model_time"];

impl PhaseTimers {
    pub fn phase(&self, p: Phase) -> f64 {
        match p {
            Phase::Update => self.update,
            Phase::Collocate => self.collocate,
            Phase::Communicate => self.communicate,
            Phase::Deliver => self.deliver,
        }
    }

    pub fn propagation(&self) -> f64 {
        self.update + self.collocate + self.communicate + self.deliver
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Phase(p) => self.phase(p),
            Metric::Construction => self.construction,
            Metric::Propagation => self.propagation(),
        }
    }

    /// The timer file text; parses back to the same values.
    pub fn to_file(&self) -> String {
        let values = [self.construction, self.update, self.collocate, self.communicate, self.deliver, self.model_time];
        TIMER_KEYS.iter().zip(values).map(|(k, v)| format!("{k} {v:?}\n")).collect()
    }
}

pub fn parse_timers(text: &str) -> Result<PhaseTimers, AnalysisError> {
    let mut values: BTreeMap<&str, f64> = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut parts = line.split_whitespace();
        let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(AnalysisError::Malformed(line.to_string()));
        };
        if !TIMER_KEYS.contains(&key) {
            return Err(AnalysisError::UnknownField(key.to_string()));
        }
        let v: f64 = value.parse().map_err(|_| AnalysisError::Malformed(line.to_string()))?;
        if !v.is_finite() {
            return Err(AnalysisError::Malformed(line.to_string()));
        }
        if values.insert(key, v).is_some() {
            return Err(AnalysisError::DuplicateField(key.to_string()));
        }
    }
    let get = |k: &str| -> Result<f64, AnalysisError> {
        let v = *values.get(k).ok_or_else(|| AnalysisError::MissingField(k.to_string()))?;
        if v < 0.0 {
            return Err(AnalysisError::Negative { field: k.to_string(), value: v });
        }
        Ok(v)
    };
    let t = PhaseTimers {
        construction: get("construction")?,
        update: get("update")?,
        collocate: get("collocate")?,
        communicate: get("communicate")?,
        deliver: get("deliver")?,
        model_time: get("model_time")?,
    };
    if t.model_time <= 0.0 {
        return Err(AnalysisError::NonPositiveModelTime(t.model_time));
    }
    Ok(t)
}

/// Wall-clock propagation time per unit of model time.
pub fn real_time_factor(t: &PhaseTimers) -> f64 {
    t.propagation() / t.model_time
}

/// Share of each phase in the propagation time, in [`Phase::ALL`] order.
pub fn phase_fractions(t: &PhaseTimers) -> Result<[f64; 4], AnalysisError> {
    fractions_of([t.update, t.collocate, t.communicate, t.deliver])
}

fn fractions_of(parts: [f64; 4]) -> Result<[f64; 4], AnalysisError> {
    let total: f64 = parts.iter().sum();
    if total <= 0.0 {
        return Err(AnalysisError::ZeroPropagation);
    }
    Ok(parts.map(|p| p / total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

/// Arithmetic mean and standard error (sample standard deviation over
/// sqrt(n)); a single value has standard error 0.
pub fn mean_stderr(xs: &[f64]) -> Result<MeanStderr, AnalysisError> {
    if xs.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    // Covers n = 1 too, and keeps rounding out of constant samples.
    if xs.iter().all(|x| *x == xs[0]) {
        return Ok(MeanStderr { mean: xs[0], stderr: 0.0 });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanStderr { mean, stderr: (var / n).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub resource_count: u32,
    pub seed: i64,
    pub timers: PhaseTimers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSummary {
    pub resource_count: u32,
    pub n_seeds: usize,
    pub metrics: BTreeMap<Metric, MeanStderr>,
    pub rtf: MeanStderr,
    /// Mean phase time over the mean propagation time, per phase. `None`
    /// when the mean propagation time is zero.
    pub fractions: Option<[f64; 4]>,
}

impl ResourceSummary {
    pub fn metric(&self, m: Metric) -> MeanStderr {
        self.metrics[&m]
    }

    pub fn fraction(&self, p: Phase) -> Option<f64> {
        let i = Phase::ALL.iter().position(|q| *q == p).unwrap();
        self.fractions.map(|f| f[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    /// Ascending resource counts.
    pub summaries: Vec<ResourceSummary>,
}

impl AnalysisResult {
    pub fn at(&self, resource_count: u32) -> Option<&ResourceSummary> {
        self.summaries.iter().find(|s| s.resource_count == resource_count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn aggregate_seeds(points: &[ScalingPoint]) -> Result<AnalysisResult, AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let mut groups: BTreeMap<u32, Vec<&PhaseTimers>> = BTreeMap::new();
    for p in points {
        groups.entry(p.resource_count).or_default().push(&p.timers);
    }
    let mut summaries = Vec::with_capacity(groups.len());
    for (resource_count, timers) in groups {
        let mut metrics = BTreeMap::new();
        for m in Metric::ALL {
            let xs: Vec<f64> = timers.iter().map(|t| t.metric(m)).collect();
            metrics.insert(m, mean_stderr(&xs)?);
        }
        let rtfs: Vec<f64> = timers.iter().map(|t| real_time_factor(t)).collect();
        let phase_means = Phase::ALL.map(|p| metrics[&Metric::Phase(p)].mean);
        summaries.push(ResourceSummary {
            resource_count,
            n_seeds: timers.len(),
            metrics,
            rtf: mean_stderr(&rtfs)?,
            fractions: fractions_of(phase_means).ok(),
        });
    }
    Ok(AnalysisResult { summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountComparison {
    pub resource_count: u32,
    /// (b - a) / a of the mean, per metric; negative means b is faster.
    pub change: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub per_count: Vec<CountComparison>,
    /// Mean of the relative changes over the shared resource counts.
    pub mean_change: BTreeMap<Metric, f64>,
}

pub fn compare(a: &AnalysisResult, b: &AnalysisResult) -> Result<ComparisonResult, AnalysisError> {
    let mut per_count = Vec::new();
    for sa in &a.summaries {
        let Some(sb) = b.at(sa.resource_count) else { continue };
        let mut change = BTreeMap::new();
        for m in Metric::ALL {
            let (old, new) = (sa.metric(m).mean, sb.metric(m).mean);
            if old <= 0.0 {
                return Err(AnalysisError::ZeroBaseline { metric: m, resource_count: sa.resource_count });
            }
            change.insert(m, (new - old) / old);
        }
        per_count.push(CountComparison { resource_count: sa.resource_count, change });
    }
    if per_count.is_empty() {
        return Err(AnalysisError::NoOverlap);
    }
    let n = per_count.len() as f64;
    let mean_change = Metric::ALL
        .into_iter()
        .map(|m| (m, per_count.iter().map(|c| c.change[&m]).sum::<f64>() / n))
        .collect();
    Ok(ComparisonResult { per_count, mean_change })
}

/// Where to find the resource count and seed of a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointKeys {
    pub resource_key: String,
    pub seed_key: String,
}

impl Default for PointKeys {
    fn default() -> Self {
        PointKeys { resource_key: "run.nodes".into(), seed_key: "run.seed".into() }
    }
}

/// Reads the timer file of a record and its coordinates, looking first at
/// the combination and then at the stored config.
pub fn scaling_point(rec: &BenchmarkRecord, keys: &PointKeys) -> Result<ScalingPoint, AnalysisError> {
    let fail = |message: String| AnalysisError::Record { record: rec.record_id.clone(), message };
    let blob = rec.raw_files.get(TIMERS_FILE).ok_or_else(|| fail(format!("no `{TIMERS_FILE}` file")))?;
    let text = std::str::from_utf8(blob).map_err(|_| fail("timer file is not UTF-8".into()))?;
    let timers = parse_timers(text).map_err(|e| fail(e.to_string()))?;
    let config = ResolvedConfig::from_json(&rec.resolved_config).ok();
    let int = |key: &str| -> Result<i64, AnalysisError> {
        let from_config = config.as_ref().and_then(|c| c.get(key)).and_then(|e| e.as_scalar().cloned());
        match rec.combination.get(key).cloned().or(from_config) {
            Some(Scalar::Int(i)) => Ok(i),
            Some(other) => Err(fail(format!("`{key}` is {other}, expected an integer"))),
            None => Err(fail(format!("`{key}` is not set"))),
        }
    };
    let count = int(&keys.resource_key)?;
    let resource_count =
        u32::try_from(count).ok().filter(|c| *c >= 1).ok_or_else(|| fail(format!("resource count {count} < 1")))?;
    Ok(ScalingPoint { resource_count, seed: int(&keys.seed_key)?, timers })
}

/// Distinct seeds per resource count, for reporting.
pub fn seeds_by_count(points: &[ScalingPoint]) -> BTreeMap<u32, BTreeSet<i64>> {
    let mut out: BTreeMap<u32, BTreeSet<i64>> = BTreeMap::new();
    for p in points {
        out.entry(p.resource_count).or_default().insert(p.seed);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timers(update: f64, collocate: f64, communicate: f64, deliver: f64, model_time: f64) -> PhaseTimers {
        PhaseTimers { construction: 0.5, update, collocate, communicate, deliver, model_time }
    }

    #[test]
    fn parses_timer_file() {
        let t = parse_timers("construction 0.84\nupdate 1.2\ncollocate 0.31\ncommunicate 0.52\ndeliver 0.97\nmodel_time 1\n").unwrap();
        assert_eq!(t, PhaseTimers { construction: 0.84, update: 1.2, collocate: 0.31, communicate: 0.52, deliver: 0.97, model_time: 1.0 });
        assert_eq!(parse_timers(&t.to_file()).unwrap(), t);
    }

    #[test]
    fn timer_file_errors() {
        let full = timers(1.0, 1.0, 1.0, 1.0, 1.0).to_file();
        let without_deliver: String = full.lines().filter(|l| !l.starts_with("deliver")).map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_timers(&without_deliver), Err(AnalysisError::MissingField("deliver".into())));
        assert_eq!(parse_timers(&format!("{full}update 2\n")), Err(AnalysisError::DuplicateField("update".into())));
        assert_eq!(parse_timers(&format!("{full}gpu 2\n")), Err(AnalysisError::UnknownField("gpu".into())));
        assert!(matches!(parse_timers(&full.replace("update 1.0", "update -1")), Err(AnalysisError::Negative { .. })));
        assert!(matches!(parse_timers(&full.replace("model_time 1.0", "model_time 0")), Err(AnalysisError::NonPositiveModelTime(_))));
        assert!(matches!(parse_timers(&full.replace("update 1.0", "update 1 s")), Err(AnalysisError::Malformed(_))));
        assert!(matches!(parse_timers(&full.replace("update 1.0", "update NaN")), Err(AnalysisError::Malformed(_))));
    }

    #[test]
    fn rtf_examples() {
        assert_eq!(real_time_factor(&timers(1.0, 0.5, 0.5, 0.5, 1.0)), 2.5);
        assert_eq!(real_time_factor(&timers(0.0, 0.0, 0.0, 0.0, 1.0)), 0.0);
        // 0.9 + 0.2 + 0.4 + 1.5 = 3.0 s over 10 s of model time.
        assert!((real_time_factor(&timers(0.9, 0.2, 0.4, 1.5, 10.0)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fraction_examples() {
        assert_eq!(phase_fractions(&timers(1.0, 1.0, 1.0, 1.0, 1.0)).unwrap(), [0.25; 4]);
        assert_eq!(phase_fractions(&timers(3.0, 1.0, 0.0, 0.0, 1.0)).unwrap(), [0.75, 0.25, 0.0, 0.0]);
        assert_eq!(phase_fractions(&timers(0.0, 0.0, 0.0, 0.0, 1.0)), Err(AnalysisError::ZeroPropagation));
    }

    #[test]
    fn aggregation_examples() {
        let m = mean_stderr(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[4.2]).unwrap().stderr, 0.0);
        assert_eq!(mean_stderr(&[0.7, 0.7, 0.7]).unwrap().stderr, 0.0);
        assert_eq!(mean_stderr(&[]), Err(AnalysisError::EmptyGroup));
        assert_eq!(aggregate_seeds(&[]), Err(AnalysisError::EmptyGroup));

        let points: Vec<ScalingPoint> = [(2, 1.0), (1, 4.0), (2, 3.0)]
            .iter()
            .enumerate()
            .map(|(i, (n, u))| ScalingPoint { resource_count: *n, seed: i as i64, timers: timers(*u, 1.0, 1.0, 1.0, 2.0) })
            .collect();
        let ar = aggregate_seeds(&points).unwrap();
        assert_eq!(ar.summaries.iter().map(|s| s.resource_count).collect::<Vec<_>>(), vec![1, 2]);
        let two = ar.at(2).unwrap();
        assert_eq!(two.n_seeds, 2);
        assert_eq!(two.metric(Metric::Phase(Phase::Update)).mean, 2.0);
        assert_eq!(two.metric(Metric::Propagation).mean, 5.0);
        assert_eq!(two.rtf.mean, 2.5);
        assert_eq!(two.fraction(Phase::Update), Some(0.4));
        assert_eq!(AnalysisResult::from_json(&ar.to_json()).unwrap(), ar);
    }

    #[test]
    fn comparison_convention() {
        let mk = |deliver: f64| {
            aggregate_seeds(&[ScalingPoint { resource_count: 1, seed: 1, timers: timers(1.0, 1.0, 1.0, deliver, 1.0) }]).unwrap()
        };
        let c = compare(&mk(1.0), &mk(0.55)).unwrap();
        assert!((c.per_count[0].change[&Metric::Phase(Phase::Deliver)] + 0.45).abs() < 1e-12);
        assert!(compare(&mk(1.0), &mk(1.0)).unwrap().mean_change.values().all(|v| *v == 0.0));
        let mut other = mk(1.0);
        other.summaries[0].resource_count = 2;
        assert_eq!(compare(&mk(1.0), &other), Err(AnalysisError::NoOverlap));
        assert!(matches!(compare(&mk(0.0), &mk(1.0)), Err(AnalysisError::ZeroBaseline { .. })));
    }
}
