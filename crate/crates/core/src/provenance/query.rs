use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::archive::{ArchiveError, BenchmarkRecord};
use crate::config::{Entry, ResolvedConfig, Scalar};

/// First segments with a fixed meaning in filter keys.
pub const NAMESPACES: [&str; 8] =
    ["metadata", "config", "combination", "annotations", "record_id", "run_id", "requester", "config_name"];

const METADATA_FIELDS: [&str; 4] = ["machine", "node_class", "timestamp", "collector_version"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl Op {
    pub const ALL: [Op; 7] = [Op::Eq, Op::Ne, Op::Lt, Op::Le, Op::Gt, Op::Ge, Op::Contains];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Contains => "~",
        }
    }

    fn is_ordering(self) -> bool {
        matches!(self, Op::Lt | Op::Le | Op::Gt | Op::Ge)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Op {
    type Err = ArchiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.symbol() == s)
            .ok_or_else(|| ArchiveError::InvalidFilter(format!("unknown operator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub key: String,
    pub op: Op,
    pub value: Scalar,
}

impl Predicate {
    pub fn new(key: impl Into<String>, op: Op, value: impl Into<Scalar>) -> Self {
        Predicate { key: key.into(), op, value: value.into() }
    }

    /// Parses `key<op>value`, e.g. `metadata.machine=mock-A` or
    /// `config.run.nodes>=2`. The value is read as int, float, bool or
    /// string, whichever fits first.
    pub fn parse(text: &str) -> Result<Self, ArchiveError> {
        let start = text
            .find(['=', '!', '<', '>', '~'])
            .ok_or_else(|| ArchiveError::InvalidFilter(format!("`{text}` has no operator")))?;
        let rest = &text[start..];
        let len = rest.find(|c: char| !"=!<>~".contains(c)).unwrap_or(rest.len());
        let op: Op = rest[..len].parse()?;
        let key = text[..start].trim();
        let value = Scalar::parse_loose(rest[len..].trim());
        let p = Predicate { key: key.to_string(), op, value };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ArchiveError> {
        let bad = |m: String| Err(ArchiveError::InvalidFilter(m));
        let segments: Vec<&str> = self.key.split('.').collect();
        if segments.iter().any(|s| s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')) {
            return bad(format!("malformed key path `{}`", self.key));
        }
        let valid = match segments[..] {
            ["record_id" | "run_id" | "requester" | "config_name"] => true,
            ["metadata", field] => METADATA_FIELDS.contains(&field),
            ["metadata", "env" | "software", _] => true,
            ["config" | "combination" | "annotations", _, ..] => true,
            _ => false,
        };
        if !valid {
            return bad(format!("unknown key path `{}`", self.key));
        }
        if self.op.is_ordering() && matches!(self.value, Scalar::Bool(_)) {
            return bad(format!("`{}` cannot compare booleans", self.op));
        }
        Ok(())
    }

    fn holds(&self, found: Option<Entry>) -> bool {
        let Some(found) = found else { return false };
        match (found, self.op) {
            (Entry::Scalar(s), Op::Contains) => s.render().contains(&self.value.render()),
            (Entry::Scalar(s), op) => compare(&s, op, &self.value),
            (Entry::List(items), Op::Contains) => items.iter().any(|s| compare(s, Op::Eq, &self.value)),
            (Entry::List(_), Op::Ne) => true,
            (Entry::List(_), _) => false,
        }
    }
}

fn scalar_eq(a: &Scalar, b: &Scalar) -> bool {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => a.render() == b.render(),
        },
    }
}

fn scalar_cmp(a: &Scalar, b: &Scalar) -> Option<Ordering> {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => Some(x.cmp(y)),
        (Scalar::Str(x), Scalar::Str(y)) => Some(x.cmp(y)),
        (Scalar::Bool(_), _) | (_, Scalar::Bool(_)) => None,
        _ => a.as_f64()?.partial_cmp(&b.as_f64()?),
    }
}

fn compare(found: &Scalar, op: Op, wanted: &Scalar) -> bool {
    match op {
        Op::Eq => scalar_eq(found, wanted),
        Op::Ne => !scalar_eq(found, wanted),
        Op::Lt => scalar_cmp(found, wanted) == Some(Ordering::Less),
        Op::Le => matches!(scalar_cmp(found, wanted), Some(Ordering::Less | Ordering::Equal)),
        Op::Gt => scalar_cmp(found, wanted) == Some(Ordering::Greater),
        Op::Ge => matches!(scalar_cmp(found, wanted), Some(Ordering::Greater | Ordering::Equal)),
        Op::Contains => found.render().contains(&wanted.render()),
    }
}

/// Conjunction of predicates. A predicate whose key a record lacks is false
/// for that record, whatever the operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub predicates: Vec<Predicate>,
}

impl RecordFilter {
    pub fn new(predicates: Vec<Predicate>) -> Self {
        RecordFilter { predicates }
    }

    pub fn parse_all<S: AsRef<str>>(texts: &[S]) -> Result<Self, ArchiveError> {
        Ok(RecordFilter { predicates: texts.iter().map(|t| Predicate::parse(t.as_ref())).collect::<Result<_, _>>()? })
    }

    pub fn validate(&self) -> Result<(), ArchiveError> {
        self.predicates.iter().try_for_each(Predicate::validate)
    }

    /// Ids of the matching records among `records`, in the given order.
    pub fn select<'a>(&self, records: &'a [BenchmarkRecord]) -> Vec<&'a str> {
        records.iter().filter(|r| self.matches(r)).map(|r| r.record_id.as_str()).collect()
    }

    pub fn matches(&self, rec: &BenchmarkRecord) -> bool {
        let mut config: Option<Option<ResolvedConfig>> = None;
        self.predicates.iter().all(|p| {
            let found = lookup(rec, &p.key, &mut config);
            p.holds(found)
        })
    }
}

fn lookup(rec: &BenchmarkRecord, key: &str, config: &mut Option<Option<ResolvedConfig>>) -> Option<Entry> {
    let text = |s: &String| Some(Entry::Scalar(Scalar::Str(s.clone())));
    let (head, rest) = key.split_once('.').unwrap_or((key, ""));
    match head {
        "record_id" => text(&rec.record_id),
        "run_id" => text(&rec.run_id),
        "requester" => text(&rec.requester),
        "config_name" => text(&rec.config_name),
        "metadata" => {
            let m = &rec.metadata;
            match rest.split_once('.') {
                Some(("env", var)) => m.captured_env.get(var).and_then(text),
                Some(("software", comp)) => m.software_versions.get(comp).and_then(text),
                _ => match rest {
                    "machine" => text(&m.machine),
                    "node_class" => text(&m.node_class),
                    "timestamp" => text(&m.timestamp),
                    "collector_version" => text(&m.collector_version),
                    _ => None,
                },
            }
        }
        "combination" => rec.combination.get(rest).cloned().map(Entry::Scalar),
        "annotations" => rec.annotations.get(rest).cloned().map(Entry::Scalar),
        "config" => config
            .get_or_insert_with(|| ResolvedConfig::from_json(&rec.resolved_config).ok())
            .as_ref()
            .and_then(|rc| rc.get(rest).cloned()),
        _ => None,
    }
}
