use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::id::{is_record_id, new_record_id};
use super::metadata::MetadataSnapshot;
use super::query::{RecordFilter, NAMESPACES};
use crate::config::{ParameterCombination, Scalar};

pub const MANIFEST_FILE: &str = "MANIFEST";
const RECORD_FILE: &str = "record.json";
const CONFIG_FILE: &str = "config.json";
const ANNOTATIONS_FILE: &str = "annotations.json";
const RAW_DIR: &str = "raw";
const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchiveError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no record `{0}` in the archive")]
    UnknownRecord(String),
    #[error("record `{id}` is corrupted: {detail}")]
    Corrupted { id: String, detail: String },
    #[error("invalid raw file name `{0}`")]
    InvalidName(String),
    #[error("annotation key `{0}` is reserved or malformed")]
    ReservedKey(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ArchiveError + '_ {
    move |e| ArchiveError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// A record before it has been stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRecord {
    pub run_id: String,
    pub requester: String,
    pub config_name: String,
    pub combination: ParameterCombination,
    /// Serialized resolved configuration, stored byte for byte.
    pub resolved_config: String,
    pub raw_files: BTreeMap<String, Vec<u8>>,
    pub metadata: MetadataSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub record_id: String,
    pub run_id: String,
    pub requester: String,
    pub config_name: String,
    pub combination: ParameterCombination,
    pub resolved_config: String,
    pub raw_files: BTreeMap<String, Vec<u8>>,
    pub metadata: MetadataSnapshot,
    pub annotations: BTreeMap<String, Scalar>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    record_id: String,
    run_id: String,
    requester: String,
    config_name: String,
    combination: ParameterCombination,
    metadata: MetadataSnapshot,
}

fn check_raw_name(name: &str) -> Result<(), ArchiveError> {
    let p = Path::new(name);
    let ok = !name.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)))
        && !name.ends_with('/');
    if ok {
        Ok(())
    } else {
        Err(ArchiveError::InvalidName(name.to_string()))
    }
}

fn check_annotation_key(key: &str) -> Result<(), ArchiveError> {
    let first = key.split('.').next().unwrap_or("");
    let well_formed = !key.is_empty()
        && key.split('.').all(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'));
    if !well_formed || NAMESPACES.contains(&first) {
        return Err(ArchiveError::ReservedKey(key.to_string()));
    }
    Ok(())
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), ArchiveError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let mut f = File::create(path).map_err(io(path))?;
    f.write_all(bytes).map_err(io(path))?;
    f.sync_all().map_err(io(path))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Directory-per-record archive.
///
/// ```text
/// <root>/<record_id>/MANIFEST          human header + "path<TAB>length<TAB>sha256"
/// <root>/<record_id>/record.json
/// <root>/<record_id>/config.json       resolved config, verbatim
/// <root>/<record_id>/raw/<name>
/// <root>/<record_id>/annotations.json  the only file that changes later
/// ```
///
/// Records are assembled in a `.tmp-*` directory and published with a
/// single rename.
#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
}

impl Archive {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ArchiveError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Archive { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn store(&self, rec: &NewRecord) -> Result<String, ArchiveError> {
        for name in rec.raw_files.keys() {
            check_raw_name(name)?;
        }
        loop {
            let id = new_record_id();
            let tmp = self.root.join(format!(
                "{TMP_PREFIX}{id}-{}-{}",
                std::process::id(),
                TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
            ));
            let result = self.write_record(&tmp, &id, rec).and_then(|()| {
                let target = self.record_dir(&id);
                match fs::rename(&tmp, &target) {
                    Ok(()) => Ok(true),
                    Err(_) if target.exists() => Ok(false),
                    Err(e) => Err(io(&target)(e)),
                }
            });
            match result {
                Ok(true) => {
                    if let Ok(dir) = File::open(&self.root) {
                        let _ = dir.sync_all();
                    }
                    return Ok(id);
                }
                Ok(false) => {
                    let _ = fs::remove_dir_all(&tmp);
                }
                Err(e) => {
                    let _ = fs::remove_dir_all(&tmp);
                    return Err(e);
                }
            }
        }
    }

    fn write_record(&self, dir: &Path, id: &str, rec: &NewRecord) -> Result<(), ArchiveError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let header = RecordHeader {
            record_id: id.to_string(),
            run_id: rec.run_id.clone(),
            requester: rec.requester.clone(),
            config_name: rec.config_name.clone(),
            combination: rec.combination.clone(),
            metadata: rec.metadata.clone(),
        };
        let mut blobs: Vec<(String, Vec<u8>)> = vec![
            (RECORD_FILE.into(), serde_json::to_vec_pretty(&header).expect("header serializes")),
            (CONFIG_FILE.into(), rec.resolved_config.as_bytes().to_vec()),
        ];
        blobs.extend(rec.raw_files.iter().map(|(n, b)| (format!("{RAW_DIR}/{n}"), b.clone())));

        let mut manifest = format!(
            "# record {id}\n# run {}\n# requester {}\n# created {}\n# config {}\n# machine {}\n",
            rec.run_id, rec.requester, rec.metadata.timestamp, rec.config_name, rec.metadata.machine
        );
        for (name, bytes) in &blobs {
            write_synced(&dir.join(name), bytes)?;
            manifest += &format!("{name}\t{}\t{}\n", bytes.len(), sha256_hex(bytes));
        }
        write_synced(&dir.join(ANNOTATIONS_FILE), b"{}\n")?;
        write_synced(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    /// Record ids in ascending order.
    pub fn list(&self) -> Result<Vec<String>, ArchiveError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            if let Some(name) = entry.file_name().to_str() {
                if is_record_id(name) && entry.path().is_dir() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn corrupted(id: &str, detail: impl Into<String>) -> ArchiveError {
        ArchiveError::Corrupted { id: id.to_string(), detail: detail.into() }
    }

    /// Reads a record and verifies every blob against the manifest.
    pub fn fetch(&self, id: &str) -> Result<BenchmarkRecord, ArchiveError> {
        let dir = self.record_dir(id);
        if !is_record_id(id) || !dir.is_dir() {
            return Err(ArchiveError::UnknownRecord(id.to_string()));
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Self::corrupted(id, format!("MANIFEST: {e}")))?;
        let mut blobs = BTreeMap::new();
        for line in manifest.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, len, sum] = fields[..] else {
                return Err(Self::corrupted(id, format!("bad manifest line `{line}`")));
            };
            let bytes = fs::read(dir.join(name)).map_err(|e| Self::corrupted(id, format!("{name}: {e}")))?;
            if len.parse::<usize>().ok() != Some(bytes.len()) || sha256_hex(&bytes) != sum {
                return Err(Self::corrupted(id, format!("checksum mismatch for {name}")));
            }
            blobs.insert(name.to_string(), bytes);
        }
        let header: RecordHeader = blobs
            .get(RECORD_FILE)
            .and_then(|b| serde_json::from_slice(b).ok())
            .ok_or_else(|| Self::corrupted(id, "record.json missing or unreadable"))?;
        if header.record_id != id {
            return Err(Self::corrupted(id, "record.json names another record"));
        }
        let resolved_config = blobs
            .get(CONFIG_FILE)
            .and_then(|b| String::from_utf8(b.clone()).ok())
            .ok_or_else(|| Self::corrupted(id, "config.json missing"))?;
        let raw_prefix = format!("{RAW_DIR}/");
        let raw_files = blobs
            .iter()
            .filter_map(|(n, b)| n.strip_prefix(&raw_prefix).map(|n| (n.to_string(), b.clone())))
            .collect();
        Ok(BenchmarkRecord {
            record_id: header.record_id,
            run_id: header.run_id,
            requester: header.requester,
            config_name: header.config_name,
            combination: header.combination,
            resolved_config,
            raw_files,
            metadata: header.metadata,
            annotations: self.read_annotations(id)?,
        })
    }

    fn read_annotations(&self, id: &str) -> Result<BTreeMap<String, Scalar>, ArchiveError> {
        let path = self.record_dir(id).join(ANNOTATIONS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Self::corrupted(id, format!("annotations: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Self::corrupted(id, format!("annotations: {e}")))
    }

    /// Adds or overwrites one annotation. Raw files and metadata are never
    /// touched.
    pub fn annotate(&self, id: &str, key: &str, value: Scalar) -> Result<BenchmarkRecord, ArchiveError> {
        check_annotation_key(key)?;
        if !is_record_id(id) || !self.record_dir(id).is_dir() {
            return Err(ArchiveError::UnknownRecord(id.to_string()));
        }
        let mut annotations = self.read_annotations(id)?;
        annotations.insert(key.to_string(), value);
        let dir = self.record_dir(id);
        let tmp = dir.join(format!("{TMP_PREFIX}{ANNOTATIONS_FILE}-{}", TMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
        let text = serde_json::to_string_pretty(&annotations).expect("annotations serialize");
        write_synced(&tmp, text.as_bytes())?;
        let target = dir.join(ANNOTATIONS_FILE);
        fs::rename(&tmp, &target).map_err(io(&target))?;
        self.fetch(id)
    }

    /// Ids of the records satisfying every predicate, ascending.
    pub fn query(&self, filter: &RecordFilter) -> Result<Vec<String>, ArchiveError> {
        filter.validate()?;
        let mut out = Vec::new();
        for id in self.list()? {
            let rec = self.fetch(&id)?;
            if filter.matches(&rec) {
                out.push(id);
            }
        }
        Ok(out)
    }
}
