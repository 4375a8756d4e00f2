use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::document::{load_document_file, ConfigDocument, Leaf, Role};
use super::error::ConfigError;
use super::schema::Schema;
use super::value::Entry;

pub const DEFAULT_MAX_DEPTH: usize = 16;

/// The fully merged configuration with per-key provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    /// Name of the leaf document.
    pub name: String,
    /// Document names from the base to the leaf.
    pub chain: Vec<String>,
    pub entries: BTreeMap<String, Entry>,
    pub provenance: BTreeMap<String, String>,
    pub roles: BTreeMap<String, Role>,
    pub schema_id: String,
}

impl ResolvedConfig {
    pub fn get(&self, path: &str) -> Option<&Entry> {
        self.entries.get(path)
    }

    /// Role label of the top-level section containing `path`.
    pub fn role_of(&self, path: &str) -> Option<Role> {
        let section = path.split('.').next()?;
        self.roles.get(section).copied()
    }

    /// Canonical serialized form. Stable for equal configs.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// In-memory set of documents addressable by name or by file path.
#[derive(Debug, Default, Clone)]
pub struct ConfigRepository {
    docs: BTreeMap<String, ConfigDocument>,
    by_path: BTreeMap<PathBuf, String>,
}

impl ConfigRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: ConfigDocument) -> Result<(), ConfigError> {
        if self.docs.contains_key(&doc.name) {
            return Err(ConfigError::DuplicateDocument { name: doc.name });
        }
        if let Some(origin) = &doc.origin {
            let key = origin.canonicalize().unwrap_or_else(|_| origin.clone());
            self.by_path.insert(key, doc.name.clone());
        }
        self.docs.insert(doc.name.clone(), doc);
        Ok(())
    }

    /// Loads every `*.toml` file directly inside `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ConfigError> {
        let mut repo = ConfigRepository::new();
        let read = std::fs::read_dir(dir)
            .map_err(|e| ConfigError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
        let mut paths: Vec<PathBuf> = read
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            repo.insert(load_document_file(&path)?)?;
        }
        Ok(repo)
    }

    pub fn get(&self, name: &str) -> Option<&ConfigDocument> {
        self.docs.get(name)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// Finds the parent of `child`: first by document name, then as a path
    /// relative to the child's file.
    pub fn lookup_parent(&self, child: &ConfigDocument, reference: &str) -> Option<&ConfigDocument> {
        if let Some(doc) = self.docs.get(reference) {
            return Some(doc);
        }
        let candidate = match child.base_dir() {
            Some(dir) => dir.join(reference),
            None => PathBuf::from(reference),
        };
        let key = candidate.canonicalize().unwrap_or(candidate);
        self.by_path.get(&key).and_then(|n| self.docs.get(n))
    }

    /// Ancestor chain of `doc`, base first, `doc` last.
    pub fn chain(&self, doc: &ConfigDocument, max_depth: usize) -> Result<Vec<ConfigDocument>, ConfigError> {
        let mut chain = vec![doc.clone()];
        let mut seen = BTreeSet::from([doc.name.clone()]);
        let mut current = doc;
        while let Some(parent_ref) = &current.parent {
            let parent = self.lookup_parent(current, parent_ref).ok_or_else(|| ConfigError::MissingAncestor {
                child: current.name.clone(),
                parent: parent_ref.clone(),
            })?;
            if !seen.insert(parent.name.clone()) {
                let mut names: Vec<String> = chain.iter().map(|d| d.name.clone()).collect();
                names.push(parent.name.clone());
                return Err(ConfigError::InheritanceCycle { chain: names });
            }
            if chain.len() > max_depth {
                return Err(ConfigError::DepthLimitExceeded { leaf: doc.name.clone(), limit: max_depth });
            }
            chain.push(parent.clone());
            current = parent;
        }
        chain.reverse();
        Ok(chain)
    }
}

/// Resolves `doc` against its ancestors in `repo` and validates the result.
pub fn resolve(doc: &ConfigDocument, repo: &ConfigRepository, schema: &Schema) -> Result<ResolvedConfig, ConfigError> {
    resolve_with_depth(doc, repo, schema, DEFAULT_MAX_DEPTH)
}

pub fn resolve_with_depth(
    doc: &ConfigDocument,
    repo: &ConfigRepository,
    schema: &Schema,
    max_depth: usize,
) -> Result<ResolvedConfig, ConfigError> {
    let chain = repo.chain(doc, max_depth)?;
    resolve_chain(&chain, schema)
}

/// Folds an explicit base-first chain of documents. Each document overrides
/// leaf values of everything before it; maps merge key by key, lists are
/// replaced wholesale and the delete sentinel removes a key together with
/// everything nested below it.
pub fn resolve_chain(chain: &[ConfigDocument], schema: &Schema) -> Result<ResolvedConfig, ConfigError> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut provenance: BTreeMap<String, String> = BTreeMap::new();
    let mut roles = BTreeMap::new();

    for doc in chain {
        let flat = doc.flatten()?;
        for (path, leaf) in &flat {
            if *leaf == Leaf::Delete {
                remove_subtree(&mut entries, &mut provenance, path);
            }
        }
        for (path, leaf) in flat {
            let Leaf::Set(entry) = leaf else { continue };
            check_shape(&entries, &path, &entry, &doc.name)?;
            entries.insert(path.clone(), entry);
            provenance.insert(path, doc.name.clone());
        }
        roles.extend(doc.roles.iter().map(|(k, v)| (k.clone(), *v)));
    }

    let leaf = chain.last().map(|d| d.name.clone()).unwrap_or_default();
    let resolved = ResolvedConfig {
        name: leaf,
        chain: chain.iter().map(|d| d.name.clone()).collect(),
        entries,
        provenance,
        roles,
        schema_id: schema.id.clone(),
    };
    schema.validate(&resolved)?;
    Ok(resolved)
}

fn remove_subtree(entries: &mut BTreeMap<String, Entry>, provenance: &mut BTreeMap<String, String>, path: &str) {
    let nested = format!("{path}.");
    let doomed: Vec<String> = entries
        .keys()
        .filter(|k| k.as_str() == path || k.starts_with(&nested))
        .cloned()
        .collect();
    for key in doomed {
        entries.remove(&key);
        provenance.remove(&key);
    }
}

/// An override must keep the kind of what it replaces, and may not turn a
/// map into a leaf or a leaf into a map.
fn check_shape(entries: &BTreeMap<String, Entry>, path: &str, entry: &Entry, document: &str) -> Result<(), ConfigError> {
    let mismatch = |expected: String| ConfigError::KindMismatch {
        key: path.to_string(),
        expected,
        found: entry.kind().to_string(),
        document: document.to_string(),
    };
    if let Some(old) = entries.get(path) {
        if !old.kind().accepts(&entry.kind()) {
            return Err(mismatch(old.kind().to_string()));
        }
    }
    let nested = format!("{path}.");
    if entries.range(nested.clone()..).next().is_some_and(|(k, _)| k.starts_with(&nested)) {
        return Err(mismatch("map".to_string()));
    }
    let mut prefix = path;
    while let Some(idx) = prefix.rfind('.') {
        prefix = &prefix[..idx];
        if let Some(old) = entries.get(prefix) {
            return Err(ConfigError::KindMismatch {
                key: prefix.to_string(),
                expected: old.kind().to_string(),
                found: "map".to_string(),
                document: document.to_string(),
            });
        }
    }
    Ok(())
}

/// One differing key between two resolved configs. A side is `None` when the
/// key is absent there.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDelta {
    pub key: String,
    pub left: Option<Entry>,
    pub right: Option<Entry>,
}

pub fn diff(left: &ResolvedConfig, right: &ResolvedConfig) -> Result<Vec<ConfigDelta>, ConfigError> {
    if left.schema_id != right.schema_id {
        return Err(ConfigError::SchemaMismatch { left: left.schema_id.clone(), right: right.schema_id.clone() });
    }
    let keys: BTreeSet<&String> = left.entries.keys().chain(right.entries.keys()).collect();
    Ok(keys
        .into_iter()
        .filter_map(|k| {
            let l = left.entries.get(k);
            let r = right.entries.get(k);
            (l != r).then(|| ConfigDelta { key: k.clone(), left: l.cloned(), right: r.cloned() })
        })
        .collect())
}
