use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    Mock,
}

fn default_capacity() -> usize {
    1
}

fn default_max_nodes() -> u32 {
    1
}

fn default_run_ticks() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeClass {
    /// Jobs of this class that may run at the same time.
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    /// Inclusive range of simulated queue delays, in ticks.
    #[serde(default)]
    pub queue_delay: [u64; 2],
    #[serde(default = "default_max_nodes")]
    pub max_nodes: u32,
    #[serde(default)]
    pub max_tasks_per_node: Option<u32>,
    #[serde(default)]
    pub max_threads_per_task: Option<u32>,
    /// Simulated job duration in ticks.
    #[serde(default = "default_run_ticks")]
    pub run_ticks: u64,
}

impl Default for NodeClass {
    fn default() -> Self {
        NodeClass {
            capacity: default_capacity(),
            queue_delay: [0, 0],
            max_nodes: default_max_nodes(),
            max_tasks_per_node: None,
            max_threads_per_task: None,
            run_ticks: default_run_ticks(),
        }
    }
}

fn default_platform() -> String {
    "ci".to_string()
}

fn default_tick_seconds() -> f64 {
    1.0
}

fn default_allowlist() -> Vec<String> {
    ["PATH", "HOME", "USER", "LANG", "TMPDIR"].iter().map(|s| s.to_string()).collect()
}

/// Declarative description of one machine, read from `machines/<name>.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineProperties {
    #[serde(default)]
    pub name: String,
    pub backend: BackendKind,
    /// Platform whose stage templates this machine uses.
    #[serde(default = "default_platform")]
    pub platform: String,
    #[serde(default)]
    pub seed: u64,
    /// Wall-clock length of one simulated tick.
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    #[serde(default = "default_allowlist")]
    pub allowlisted_env: Vec<String>,
    #[serde(default)]
    pub internet_access_node_classes: Vec<String>,
    #[serde(default)]
    pub software_versions: BTreeMap<String, String>,
    #[serde(default)]
    pub node_classes: BTreeMap<String, NodeClass>,
    /// Node class each stage is submitted to; unlisted stages use `default_node_class`.
    #[serde(default)]
    pub stage_node_class: BTreeMap<String, String>,
    #[serde(default)]
    pub default_node_class: Option<String>,
    /// Nodes charged to a job when the config does not say otherwise.
    #[serde(default)]
    pub stage_nodes: BTreeMap<String, u32>,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl MachineProperties {
    /// A local machine with a single `local` node class.
    pub fn local(name: &str) -> Self {
        let class = NodeClass { capacity: 4, max_nodes: u32::MAX, ..NodeClass::default() };
        MachineProperties {
            name: name.to_string(),
            backend: BackendKind::Local,
            platform: default_platform(),
            seed: 0,
            tick_seconds: default_tick_seconds(),
            allowlisted_env: default_allowlist(),
            internet_access_node_classes: vec!["local".into()],
            software_versions: BTreeMap::new(),
            node_classes: BTreeMap::from([("local".to_string(), class)]),
            stage_node_class: BTreeMap::new(),
            default_node_class: Some("local".into()),
            stage_nodes: BTreeMap::new(),
            source: None,
        }
    }

    pub fn from_toml(name: &str, text: &str) -> Result<Self, ExecError> {
        let mut props: MachineProperties =
            toml::from_str(text).map_err(|e| ExecError::Machine { machine: name.to_string(), message: e.to_string() })?;
        if props.name.is_empty() {
            props.name = name.to_string();
        }
        props.validate()?;
        Ok(props)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self, ExecError> {
        let path = dir.join(format!("{name}.toml"));
        let text = std::fs::read_to_string(&path).map_err(|e| ExecError::Machine {
            machine: name.to_string(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let mut props = Self::from_toml(name, &text)?;
        props.source = Some(path);
        Ok(props)
    }

    fn validate(&self) -> Result<(), ExecError> {
        let bad = |message: String| Err(ExecError::Machine { machine: self.name.clone(), message });
        if self.node_classes.is_empty() {
            return bad("no node classes declared".into());
        }
        for (name, class) in &self.node_classes {
            if class.capacity == 0 || class.max_nodes == 0 {
                return bad(format!("node class `{name}` needs capacity and max_nodes >= 1"));
            }
            if class.queue_delay[0] > class.queue_delay[1] {
                return bad(format!("node class `{name}`: queue_delay min exceeds max"));
            }
        }
        let referenced = self
            .stage_node_class
            .values()
            .chain(&self.internet_access_node_classes)
            .chain(self.default_node_class.iter());
        for class in referenced {
            if !self.node_classes.contains_key(class) {
                return bad(format!("unknown node class `{class}`"));
            }
        }
        if !(self.tick_seconds > 0.0 && self.tick_seconds.is_finite()) {
            return bad("tick_seconds must be positive".into());
        }
        Ok(())
    }

    pub fn node_class_for(&self, stage: &str) -> Result<&str, ExecError> {
        self.stage_node_class
            .get(stage)
            .or(self.default_node_class.as_ref())
            .map(String::as_str)
            .ok_or_else(|| ExecError::Machine {
                machine: self.name.clone(),
                message: format!("no node class for stage `{stage}` and no default_node_class"),
            })
    }

    pub fn has_internet(&self, class: &str) -> bool {
        self.internet_access_node_classes.iter().any(|c| c == class)
    }
}
