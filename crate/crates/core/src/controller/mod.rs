//! Run construction and execution.
//!
//! A [`RunRequest`] names a config document and the machines to run on.
//! [`build_run`] resolves the config, composes each machine's blueprint,
//! expands the parameter space and splits the workflow into shared stages
//! and per-combination stages. [`execute_run`] drives the stages over an
//! executor, archives each combination's Execution output, and records every
//! state change in an append-only event log so that [`status`] works from
//! another process and an interrupted run can be resumed.
//!
//! A config root looks like this:
//!
//! ```text
//! <root>/configs/*.toml        config documents
//! <root>/schema.toml           optional; without it every config is accepted
//! <root>/templates/            template layers
//! <root>/machines/<name>.toml  machine properties
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    axes, expand_parameter_space, load_document, load_document_file, resolve_chain, ConfigDocument, ConfigError,
    ConfigRepository, Entry, ResolvedConfig, Scalar, Schema, DEFAULT_MAX_DEPTH,
};
use crate::executor::{ExecError, MachineProperties};
use crate::provenance::{new_record_id, ArchiveError};
use crate::templates::{instantiate, plan_stage_split, Layer, PipelineInstance, StageSplit, TemplateError, TemplateSet};

mod execute;
mod state;

pub use execute::{execute_run, CombinationReport, ExecuteOptions, RunReport, COMMAND_LOG};
pub use state::{
    list_runs, load_run, read_events, run_dir, save_run, status, Event, RunSnapshot, Slot, StageKey, StageState, ARTIFACTS_DIR,
    EVENTS_FILE,
};

/// Name of the synthetic document that carries request overrides.
pub const OVERRIDE_DOCUMENT: &str = "request-override";
/// Config key choosing the workflow template.
pub const WORKFLOW_KEY: &str = "experiment.workflow";
pub const DEFAULT_WORKFLOW: &str = "benchmark";
/// The stage whose output is archived, one record per combination.
pub const EXECUTION_STAGE: &str = "Execution";
/// Stages that need internet access on the target machine.
pub const INTERNET_STAGES: [&str; 1] = ["Preparation"];
/// Stages run on the local host instead of the target machine.
pub const LOCAL_STAGES: [&str; 2] = ["Analyze", "Plot"];
/// Config keys sizing the Execution job.
pub const RESOURCE_KEYS: [&str; 3] = ["run.nodes", "run.tasks_per_node", "run.threads_per_task"];

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{} layer: {}", .0.layer(), .0)]
    Template(#[from] TemplateError),
    #[error("executor: {0}")]
    Exec(#[from] ExecError),
    #[error("archive: {0}")]
    Archive(#[from] ArchiveError),
    #[error("unknown config `{0}`")]
    UnknownConfig(String),
    #[error("unknown machine `{0}`")]
    UnknownMachine(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("run `{run_id}`: {message}")]
    RunState { run_id: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl ControllerError {
    /// Whether the fault lies with the request or its inputs rather than
    /// with execution.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            ControllerError::Config(_)
                | ControllerError::Template(_)
                | ControllerError::UnknownConfig(_)
                | ControllerError::UnknownMachine(_)
                | ControllerError::UnknownRun(_)
                | ControllerError::InvalidRequest(_)
        ) || matches!(self, ControllerError::Exec(ExecError::Machine { .. }))
    }

    /// Template layer at fault, if any.
    pub fn layer(&self) -> Option<Layer> {
        match self {
            ControllerError::Template(e) => Some(e.layer()),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ControllerError + '_ {
    move |e| ControllerError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    /// Document name in the repository, or a path to a document file.
    pub config_ref: String,
    /// `key.path = TOML value` pairs layered on top of the config.
    pub overrides: Vec<(String, String)>,
    pub target_machines: Vec<String>,
    pub requester: String,
}

impl RunRequest {
    pub fn new(config_ref: impl Into<String>, machines: &[&str]) -> Self {
        RunRequest {
            config_ref: config_ref.into(),
            overrides: Vec::new(),
            target_machines: machines.iter().map(|s| s.to_string()).collect(),
            requester: default_requester(),
        }
    }

    pub fn with_override(mut self, key: &str, value: &str) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }
}

pub fn default_requester() -> String {
    std::env::var("USER").unwrap_or_else(|_| "unknown".to_string())
}

/// Parses `key=value` as given on a command line.
pub fn parse_override(text: &str) -> Result<(String, String), ControllerError> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| ControllerError::InvalidRequest(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|s| s.is_empty()) {
        return Err(ControllerError::InvalidRequest(format!("override key `{key}` is not a dotted path")));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

/// Values that parse as TOML keep their type; anything else is a string.
fn toml_literal(value: &str) -> String {
    let probe = format!("v = {value}");
    if toml::from_str::<toml::Table>(&probe).is_ok() {
        value.to_string()
    } else {
        toml::Value::String(value.to_string()).to_string()
    }
}

fn override_document(leaf: &ConfigDocument, overrides: &[(String, String)]) -> Result<ConfigDocument, ControllerError> {
    let mut text = format!("name = \"{OVERRIDE_DOCUMENT}\"\n");
    for (key, value) in overrides {
        let quoted: Vec<String> = key.split('.').map(|s| toml::Value::String(s.to_string()).to_string()).collect();
        text.push_str(&format!("{} = {}\n", quoted.join("."), toml_literal(value)));
    }
    let mut doc = load_document(&text, None)?;
    doc.parent = Some(leaf.name.clone());
    Ok(doc)
}

/// Everything read from a config root.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub configs: ConfigRepository,
    pub schema: Schema,
    pub templates: TemplateSet,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ControllerError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(ControllerError::Io { path: root, message: "config root is not a directory".into() });
        }
        let configs = ConfigRepository::load_dir(&root.join("configs"))?;
        let schema_path = root.join("schema.toml");
        let schema = if schema_path.is_file() { Schema::load(&schema_path)? } else { Schema::permissive() };
        let templates = TemplateSet::load(&root.join("templates"))?;
        Ok(Workspace { root, configs, schema, templates })
    }

    pub fn machines_dir(&self) -> PathBuf {
        self.root.join("machines")
    }

    pub fn machine(&self, name: &str) -> Result<MachineProperties, ControllerError> {
        let valid = !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != "..";
        if !valid || !self.machines_dir().join(format!("{name}.toml")).is_file() {
            return Err(ControllerError::UnknownMachine(name.to_string()));
        }
        Ok(MachineProperties::load(&self.machines_dir(), name)?)
    }

    /// Looks a document up by name, then as a file path.
    pub fn document(&self, reference: &str) -> Result<ConfigDocument, ControllerError> {
        if let Some(doc) = self.configs.get(reference) {
            return Ok(doc.clone());
        }
        let path = Path::new(reference);
        let candidates = [path.to_path_buf(), self.root.join(path), self.root.join("configs").join(path)];
        match candidates.iter().find(|p| p.is_file()) {
            Some(p) => Ok(load_document_file(p)?),
            None => Err(ControllerError::UnknownConfig(reference.to_string())),
        }
    }

    pub fn resolve_request(&self, req: &RunRequest) -> Result<ResolvedConfig, ControllerError> {
        let doc = self.document(&req.config_ref)?;
        let mut chain = self.configs.chain(&doc, DEFAULT_MAX_DEPTH)?;
        if !req.overrides.is_empty() {
            chain.push(override_document(&doc, &req.overrides)?);
        }
        Ok(resolve_chain(&chain, &self.schema)?)
    }
}

fn workflow_name(rc: &ResolvedConfig) -> Result<String, ControllerError> {
    match rc.get(WORKFLOW_KEY) {
        None => Ok(DEFAULT_WORKFLOW.to_string()),
        Some(Entry::Scalar(Scalar::Str(s))) => Ok(s.clone()),
        Some(other) => Err(ControllerError::InvalidRequest(format!("{WORKFLOW_KEY} must be a string, found {}", other.kind()))),
    }
}

/// Instances, split and stage order for one machine. Pure in its inputs.
pub fn plan_instances(
    ws: &Workspace,
    rc: &ResolvedConfig,
    machine: &MachineProperties,
) -> Result<(Vec<String>, StageSplit, Vec<PipelineInstance>), ControllerError> {
    let workflow = workflow_name(rc)?;
    let bp = ws.templates.compose(&workflow, &machine.platform, &machine.name)?;
    let split = plan_stage_split(&bp, &axes(rc)?);
    let instances = expand_parameter_space(rc)?
        .iter()
        .map(|combo| instantiate(&bp, rc, combo))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bp.stage_names().map(str::to_string).collect(), split, instances))
}

/// One machine's share of a request.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub run_id: String,
    pub requester: String,
    pub machine: MachineProperties,
    pub resolved: ResolvedConfig,
    /// Workflow order.
    pub stages: Vec<String>,
    pub split: StageSplit,
    pub instances: Vec<PipelineInstance>,
    pub stage_states: BTreeMap<StageKey, StageState>,
    /// Archived record per combination ordinal.
    pub record_ids: BTreeMap<usize, String>,
    /// Files produced per stage, relative to the run's artifact directory.
    pub artifacts: BTreeMap<String, BTreeSet<PathBuf>>,
    /// Execution attempts so far; resuming opens a new one.
    pub attempt: u32,
}

impl PipelineRun {
    /// Every (stage, slot) the run will execute, in workflow order.
    pub fn keys(&self) -> Vec<StageKey> {
        let mut keys = Vec::new();
        for stage in &self.stages {
            if self.split.is_shared(stage) {
                keys.push(StageKey::shared(stage));
            } else {
                keys.extend((0..self.instances.len()).map(|o| StageKey::at(stage, o)));
            }
        }
        keys
    }

    pub fn state(&self, key: &StageKey) -> StageState {
        self.stage_states.get(key).copied().unwrap_or(StageState::Pending)
    }

    pub fn instances_json(&self) -> Vec<String> {
        self.instances.iter().map(PipelineInstance::to_canonical_json).collect()
    }
}

pub fn build_for_machine(
    ws: &Workspace,
    rc: &ResolvedConfig,
    machine: MachineProperties,
    requester: &str,
) -> Result<PipelineRun, ControllerError> {
    let (stages, split, instances) = plan_instances(ws, rc, &machine)?;
    let mut run = PipelineRun {
        run_id: new_record_id(),
        requester: requester.to_string(),
        machine,
        resolved: rc.clone(),
        stages,
        split,
        instances,
        stage_states: BTreeMap::new(),
        record_ids: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        attempt: 0,
    };
    run.stage_states = run.keys().into_iter().map(|k| (k, StageState::Pending)).collect();
    Ok(run)
}

/// One run per target machine, every stage pending.
pub fn build_run(req: &RunRequest, ws: &Workspace) -> Result<Vec<PipelineRun>, ControllerError> {
    if req.target_machines.is_empty() {
        return Err(ControllerError::InvalidRequest("no target machine given".into()));
    }
    let unique: BTreeSet<&String> = req.target_machines.iter().collect();
    if unique.len() != req.target_machines.len() {
        return Err(ControllerError::InvalidRequest("a target machine is listed twice".into()));
    }
    let rc = ws.resolve_request(req)?;
    req.target_machines
        .iter()
        .map(|m| build_for_machine(ws, &rc, ws.machine(m)?, &req.requester))
        .collect()
}

/// Rebuilds the instances an archived record came from: its stored config
/// snapshot, its machine, the current templates.
pub fn rebuild_from_snapshot(
    ws: &Workspace,
    resolved_config_json: &str,
    machine: &str,
) -> Result<Vec<PipelineInstance>, ControllerError> {
    let rc = ResolvedConfig::from_json(resolved_config_json)
        .map_err(|e| ControllerError::InvalidRequest(format!("stored config does not parse: {e}")))?;
    Ok(plan_instances(ws, &rc, &ws.machine(machine)?)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("run.seed=9").unwrap(), ("run.seed".into(), "9".into()));
        assert_eq!(parse_override(" a.b = x=y ").unwrap(), ("a.b".into(), "x=y".into()));
        assert!(parse_override("noequals").is_err());
        assert!(parse_override("a..b=1").is_err());
        assert_eq!(toml_literal("9"), "9");
        assert_eq!(toml_literal("[1, 2]"), "[1, 2]");
        assert_eq!(toml_literal("hello world"), "\"hello world\"");
    }

    #[test]
    fn override_document_nests_keys() {
        let leaf = ConfigDocument::new("leaf");
        let doc = override_document(&leaf, &[("run.seed".into(), "9".into()), ("model.name".into(), "x".into())]).unwrap();
        assert_eq!(doc.name, OVERRIDE_DOCUMENT);
        assert_eq!(doc.parent.as_deref(), Some("leaf"));
        let flat = doc.flatten().unwrap();
        assert_eq!(flat.len(), 2);
        assert!(override_document(&leaf, &[("a".into(), "1".into()), ("a".into(), "2".into())]).is_err());
    }
}
