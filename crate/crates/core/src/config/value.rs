use std::fmt;

use serde::{Deserialize, Serialize};

/// A single configuration value that can be substituted into a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Bool,
    Int,
    Float,
    String,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarKind::Bool => "bool",
            ScalarKind::Int => "int",
            ScalarKind::Float => "float",
            ScalarKind::String => "string",
        })
    }
}

impl Scalar {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Scalar::Bool(_) => ScalarKind::Bool,
            Scalar::Int(_) => ScalarKind::Int,
            Scalar::Float(_) => ScalarKind::Float,
            Scalar::Str(_) => ScalarKind::String,
        }
    }

    /// Canonical text form used when a value is inserted into a command.
    ///
    /// Integers print without padding, floats in the shortest decimal form
    /// that round-trips, booleans as `true`/`false`, strings verbatim.
    pub fn render(&self) -> String {
        match self {
            Scalar::Bool(b) => b.to_string(),
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(x) => format!("{x}"),
            Scalar::Str(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Parses a loosely typed command-line literal: integer, float, boolean,
    /// otherwise the raw string.
    pub fn parse_loose(text: &str) -> Scalar {
        if let Ok(i) = text.parse::<i64>() {
            return Scalar::Int(i);
        }
        if let Ok(x) = text.parse::<f64>() {
            if x.is_finite() {
                return Scalar::Float(x);
            }
        }
        match text {
            "true" => Scalar::Bool(true),
            "false" => Scalar::Bool(false),
            _ => Scalar::Str(text.to_string()),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

/// A node of a configuration document tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(Scalar),
    List(Vec<Scalar>),
    Map(std::collections::BTreeMap<String, Value>),
}

/// A leaf of a resolved configuration: nested maps have been flattened into
/// dotted key paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Scalar(Scalar),
    List(Vec<Scalar>),
}

/// Shape of a resolved entry. An empty list has no element kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Scalar(ScalarKind),
    List(Option<ScalarKind>),
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryKind::Scalar(k) => write!(f, "{k}"),
            EntryKind::List(Some(k)) => write!(f, "list<{k}>"),
            EntryKind::List(None) => f.write_str("list"),
        }
    }
}

impl EntryKind {
    /// Whether a value of kind `other` may replace a value of this kind.
    pub fn accepts(&self, other: &EntryKind) -> bool {
        match (self, other) {
            (EntryKind::Scalar(a), EntryKind::Scalar(b)) => a == b,
            (EntryKind::List(None), EntryKind::List(_)) | (EntryKind::List(_), EntryKind::List(None)) => true,
            (EntryKind::List(Some(a)), EntryKind::List(Some(b))) => a == b,
            _ => false,
        }
    }

    pub fn parse(text: &str) -> Option<EntryKind> {
        let scalar = |s: &str| match s {
            "bool" => Some(ScalarKind::Bool),
            "int" => Some(ScalarKind::Int),
            "float" => Some(ScalarKind::Float),
            "string" => Some(ScalarKind::String),
            _ => None,
        };
        if text == "list" {
            return Some(EntryKind::List(None));
        }
        if let Some(inner) = text.strip_prefix("list<").and_then(|s| s.strip_suffix('>')) {
            return scalar(inner).map(|k| EntryKind::List(Some(k)));
        }
        scalar(text).map(EntryKind::Scalar)
    }
}

impl Entry {
    pub fn kind(&self) -> EntryKind {
        match self {
            Entry::Scalar(s) => EntryKind::Scalar(s.kind()),
            Entry::List(items) => EntryKind::List(items.first().map(Scalar::kind)),
        }
    }

    pub fn as_scalar(&self) -> Option<&Scalar> {
        match self {
            Entry::Scalar(s) => Some(s),
            Entry::List(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Entry::Scalar(s) => s.render(),
            Entry::List(items) => {
                let parts: Vec<String> = items.iter().map(Scalar::render).collect();
                format!("[{}]", parts.join(", "))
            }
        }
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<Scalar> for Entry {
    fn from(s: Scalar) -> Self {
        Entry::Scalar(s)
    }
}
