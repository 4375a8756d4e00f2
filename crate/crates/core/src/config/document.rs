use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::error::ConfigError;
use super::value::{Entry, Scalar, Value};

/// Top-level key naming the document.
pub const NAME_KEY: &str = "name";
/// Top-level key naming the parent document, by name or by relative path.
pub const EXTENDS_KEY: &str = "extends";
/// Top-level table mapping section names to authoring roles.
pub const ROLES_KEY: &str = "roles";
/// String value that removes an inherited key.
pub const DELETE_SENTINEL: &str = "__delete__";

/// Who authored a top-level section. Advisory only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Machine,
    Platform,
    Software,
    Model,
    User,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "machine" => Ok(Role::Machine),
            "platform" => Ok(Role::Platform),
            "software" => Ok(Role::Software),
            "model" => Ok(Role::Model),
            "user" => Ok(Role::User),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Machine => "machine",
            Role::Platform => "platform",
            Role::Software => "software",
            Role::Model => "model",
            Role::User => "user",
        })
    }
}

/// A flattened leaf of a document: either a value or a deletion marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Leaf {
    Set(Entry),
    Delete,
}

/// One configuration file: a partial benchmark specification that may extend
/// a parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub name: String,
    pub parent: Option<String>,
    pub sections: BTreeMap<String, Value>,
    pub roles: BTreeMap<String, Role>,
    /// File the document was read from, if any. Relative parent paths are
    /// resolved against its directory.
    pub origin: Option<PathBuf>,
}

impl ConfigDocument {
    pub fn new(name: impl Into<String>) -> Self {
        ConfigDocument {
            name: name.into(),
            parent: None,
            sections: BTreeMap::new(),
            roles: BTreeMap::new(),
            origin: None,
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    /// Sets a value at a dotted key path, creating intermediate maps.
    pub fn set(&mut self, path: &str, value: Value) -> Result<(), ConfigError> {
        let segments = split_path(path)?;
        let (last, parents) = segments.split_last().expect("non-empty path");
        let mut node = &mut self.sections;
        for seg in parents {
            let slot = node
                .entry(seg.to_string())
                .or_insert_with(|| Value::Map(BTreeMap::new()));
            node = match slot {
                Value::Map(m) => m,
                _ => return Err(ConfigError::DuplicateKey { document: self.name.clone(), path: path.to_string() }),
            };
        }
        node.insert(last.to_string(), value);
        Ok(())
    }

    /// Dotted key path → leaf, in key order.
    pub fn flatten(&self) -> Result<BTreeMap<String, Leaf>, ConfigError> {
        let mut out = BTreeMap::new();
        flatten_into(&self.name, "", &self.sections, &mut out)?;
        Ok(out)
    }

    /// Base directory for resolving relative parent references.
    pub fn base_dir(&self) -> Option<&Path> {
        self.origin.as_deref().and_then(Path::parent)
    }
}

fn flatten_into(
    doc: &str,
    prefix: &str,
    map: &BTreeMap<String, Value>,
    out: &mut BTreeMap<String, Leaf>,
) -> Result<(), ConfigError> {
    for (key, value) in map {
        if key.is_empty() {
            return Err(ConfigError::InvalidKey { document: doc.to_string(), key: prefix.to_string() });
        }
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let leaf = match value {
            Value::Map(inner) => {
                flatten_into(doc, &path, inner, out)?;
                continue;
            }
            Value::Scalar(Scalar::Str(s)) if s == DELETE_SENTINEL => Leaf::Delete,
            Value::Scalar(s) => Leaf::Set(Entry::Scalar(s.clone())),
            Value::List(items) => Leaf::Set(Entry::List(items.clone())),
        };
        // A quoted key containing dots can collide with a nested path.
        if out.insert(path.clone(), leaf).is_some() {
            return Err(ConfigError::DuplicateKey { document: doc.to_string(), path });
        }
    }
    Ok(())
}

pub(crate) fn split_path(path: &str) -> Result<Vec<&str>, ConfigError> {
    let segments: Vec<&str> = path.split('.').collect();
    if path.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::InvalidKey { document: String::new(), key: path.to_string() });
    }
    Ok(segments)
}

/// Parses a document from TOML text. `origin` supplies the fallback name
/// (file stem) and the base directory for relative parent paths.
pub fn load_document(text: &str, origin: Option<&Path>) -> Result<ConfigDocument, ConfigError> {
    let label = origin.map(|p| p.display().to_string()).unwrap_or_else(|| "<input>".to_string());
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        if e.message() == "duplicate key" {
            ConfigError::DuplicateKey { document: label.clone(), path: e.to_string().trim().to_string() }
        } else {
            ConfigError::Parse { source_name: label.clone(), message: e.to_string().trim().to_string() }
        }
    })?;
    if table.is_empty() {
        return Err(ConfigError::EmptyDocument { source_name: label });
    }

    let mut sections = BTreeMap::new();
    let mut name = None;
    let mut parent = None;
    let mut roles = BTreeMap::new();
    for (key, value) in table {
        match key.as_str() {
            NAME_KEY => name = Some(expect_string(&label, NAME_KEY, value)?),
            EXTENDS_KEY => parent = Some(expect_string(&label, EXTENDS_KEY, value)?),
            ROLES_KEY => {
                let toml::Value::Table(t) = value else {
                    return Err(invalid(&label, ROLES_KEY, "expected a table of section = role"));
                };
                for (section, role) in t {
                    let role = expect_string(&label, ROLES_KEY, role)?;
                    let role = role.parse::<Role>().map_err(|m| invalid(&label, ROLES_KEY, &m))?;
                    roles.insert(section, role);
                }
            }
            _ => {
                let converted = convert(&label, &key, value)?;
                sections.insert(key, converted);
            }
        }
    }

    let name = match name {
        Some(n) => n,
        None => origin
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| invalid(&label, NAME_KEY, "document has no name and no file name to fall back on"))?,
    };
    if name.is_empty() {
        return Err(invalid(&label, NAME_KEY, "name must be non-empty"));
    }
    let doc = ConfigDocument { name, parent, sections, roles, origin: origin.map(Path::to_path_buf) };
    // Surface flattening problems (empty keys, dotted-key collisions) at load time.
    doc.flatten()?;
    Ok(doc)
}

pub fn load_document_file(path: &Path) -> Result<ConfigDocument, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    load_document(&text, Some(path))
}

fn invalid(source: &str, key: &str, message: &str) -> ConfigError {
    ConfigError::InvalidValue { source_name: source.to_string(), key: key.to_string(), message: message.to_string() }
}

fn expect_string(source: &str, key: &str, value: toml::Value) -> Result<String, ConfigError> {
    match value {
        toml::Value::String(s) => Ok(s),
        _ => Err(invalid(source, key, "expected a string")),
    }
}

fn convert_scalar(source: &str, key: &str, value: toml::Value) -> Result<Scalar, ConfigError> {
    Ok(match value {
        toml::Value::String(s) => Scalar::Str(s),
        toml::Value::Integer(i) => Scalar::Int(i),
        toml::Value::Float(x) if x.is_finite() => Scalar::Float(x),
        toml::Value::Float(_) => return Err(invalid(source, key, "non-finite floats are not allowed")),
        toml::Value::Boolean(b) => Scalar::Bool(b),
        toml::Value::Datetime(_) => return Err(invalid(source, key, "datetimes are not supported; quote them")),
        toml::Value::Array(_) | toml::Value::Table(_) => {
            return Err(invalid(source, key, "lists may only contain scalars"))
        }
    })
}

fn convert(source: &str, key: &str, value: toml::Value) -> Result<Value, ConfigError> {
    match value {
        toml::Value::Table(t) => {
            let mut map = BTreeMap::new();
            for (k, v) in t {
                let path = format!("{key}.{k}");
                map.insert(k, convert(source, &path, v)?);
            }
            Ok(Value::Map(map))
        }
        toml::Value::Array(items) => {
            let items = items
                .into_iter()
                .map(|v| convert_scalar(source, key, v))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = items.first() {
                if items.iter().any(|s| s.kind() != first.kind()) {
                    return Err(invalid(source, key, "list values must all have the same kind"));
                }
            }
            Ok(Value::List(items))
        }
        other => Ok(Value::Scalar(convert_scalar(source, key, other)?)),
    }
}
