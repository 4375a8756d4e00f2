use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::error::ConfigError;
use super::resolve::ResolvedConfig;
use super::value::EntryKind;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRule {
    pub kind: Option<EntryKind>,
    pub required: bool,
}

/// Declares which keys a resolved configuration must contain and what kind
/// each typed key must have. Keys not mentioned are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub id: String,
    pub fields: BTreeMap<String, FieldRule>,
}

#[derive(Deserialize)]
struct SchemaFile {
    id: String,
    #[serde(default)]
    fields: BTreeMap<String, FieldFile>,
}

#[derive(Deserialize)]
struct FieldFile {
    kind: Option<String>,
    #[serde(default)]
    required: bool,
}

impl Schema {
    /// Accepts any configuration.
    pub fn permissive() -> Self {
        Schema { id: "any".to_string(), fields: BTreeMap::new() }
    }

    pub fn new(id: impl Into<String>) -> Self {
        Schema { id: id.into(), fields: BTreeMap::new() }
    }

    pub fn require(mut self, key: &str, kind: Option<EntryKind>) -> Self {
        self.fields.insert(key.to_string(), FieldRule { kind, required: true });
        self
    }

    pub fn typed(mut self, key: &str, kind: EntryKind) -> Self {
        self.fields.insert(key.to_string(), FieldRule { kind: Some(kind), required: false });
        self
    }

    /// Parses a schema file:
    ///
    /// ```toml
    /// id = "benchmark-v1"
    /// [fields."run.nodes"]
    /// kind = "int"
    /// required = true
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: SchemaFile = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { source_name: "schema".into(), message: e.to_string().trim().to_string() })?;
        let mut fields = BTreeMap::new();
        for (key, f) in file.fields {
            let kind = match f.kind {
                Some(k) => Some(EntryKind::parse(&k).ok_or_else(|| ConfigError::InvalidValue {
                    source_name: "schema".into(),
                    key: key.clone(),
                    message: format!("unknown kind `{k}`"),
                })?),
                None => None,
            };
            fields.insert(key, FieldRule { kind, required: f.required });
        }
        Ok(Schema { id: file.id, fields })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self, rc: &ResolvedConfig) -> Result<(), ConfigError> {
        for (key, rule) in &self.fields {
            match rc.entries.get(key) {
                None if rule.required => {
                    return Err(ConfigError::MissingRequired { schema: self.id.clone(), key: key.clone() })
                }
                None => {}
                Some(entry) => {
                    if let Some(kind) = &rule.kind {
                        if !kind.accepts(&entry.kind()) {
                            return Err(ConfigError::KindMismatch {
                                key: key.clone(),
                                expected: kind.to_string(),
                                found: entry.kind().to_string(),
                                document: rc.provenance.get(key).cloned().unwrap_or_default(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::document::load_document;
    use crate::config::resolve::{resolve_chain};
    use crate::config::value::ScalarKind;

    #[test]
    fn required_and_typed_keys() {
        let schema = Schema::from_toml(
            "id = \"s\"\n[fields.\"run.nodes\"]\nkind = \"int\"\nrequired = true\n[fields.tag]\nkind = \"string\"\n",
        )
        .unwrap();
        assert_eq!(schema.fields["run.nodes"].kind, Some(EntryKind::Scalar(ScalarKind::Int)));

        let ok = load_document("name = \"a\"\nrun.nodes = 2", None).unwrap();
        assert_eq!(resolve_chain(&[ok], &schema).unwrap().schema_id, "s");

        let missing = load_document("name = \"a\"\ntag = \"x\"", None).unwrap();
        assert!(matches!(resolve_chain(&[missing], &schema), Err(ConfigError::MissingRequired { .. })));

        let wrong = load_document("name = \"a\"\nrun.nodes = 2\ntag = 3", None).unwrap();
        assert!(matches!(resolve_chain(&[wrong], &schema), Err(ConfigError::KindMismatch { .. })));
    }

    #[test]
    fn validation_runs_after_deletion() {
        let schema = Schema::new("s").require("a", None);
        let base = load_document("name = \"base\"\na = 1", None).unwrap();
        let child = load_document("name = \"c\"\nextends = \"base\"\na = \"__delete__\"", None).unwrap();
        assert!(matches!(resolve_chain(&[base, child], &schema), Err(ConfigError::MissingRequired { .. })));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(Schema::from_toml("id = \"s\"\n[fields.a]\nkind = \"complex\"\n").is_err());
    }
}
