//! Layered pipeline templates.
//!
//! A pipeline is assembled from four layers, each more specific than the last:
//!
//! 1. the **workflow** lists the stages in order;
//! 2. the **platform** gives each stage a skeleton of lines, some of which are
//!    `@block <name>` slots;
//! 3. the **machine** fills every slot with a named block of commands, which
//!    may pull in other blocks (`@block`) or implementation templates
//!    (`@impl`);
//! 4. the **implementation** templates hold the precise commands.
//!
//! Composition yields a [`PipelineBlueprint`] whose commands may still contain
//! `{{key.path}}` placeholders. [`instantiate`] fills them from a parameter
//! combination and the resolved configuration.

mod files;
pub mod placeholder;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Entry, ParameterAxis, ParameterCombination, ResolvedConfig};

pub use files::TemplateSet;

/// The seven default benchmarking stages.
pub const DEFAULT_STAGES: [&str; 7] = ["Preparation", "Build", "Execution", "Transfer", "Annotation", "Analyze", "Plot"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Workflow,
    Platform,
    Machine,
    Implementation,
    Instance,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Workflow => "workflow",
            Layer::Platform => "platform",
            Layer::Machine => "machine",
            Layer::Implementation => "implementation",
            Layer::Instance => "instance",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{layer} layer: {message}")]
    Invalid { layer: Layer, message: String },
    #[error("platform layer has no template for stage `{stage}`")]
    MissingPlatformStage { stage: String },
    #[error("machine layer has no block `{slot}` (referenced by stage `{stage}`)")]
    UnresolvedSlot { stage: String, slot: String },
    #[error("implementation layer has no template `{name}` (referenced by block `{block}`)")]
    UnresolvedImplementation { block: String, name: String },
    #[error("machine layer: block reference cycle {}", chain.join(" -> "))]
    BlockCycle { chain: Vec<String> },
    #[error("malformed placeholder in `{text}`")]
    MalformedPlaceholder { text: String },
    #[error("stage `{stage}`: placeholder `{{{{{key}}}}}` is defined neither by the combination nor by the config")]
    UnresolvedPlaceholder { stage: String, key: String },
    #[error("stage `{stage}`: placeholder `{{{{{key}}}}}` refers to a list; lists are parameter axes")]
    ListPlaceholder { stage: String, key: String },
}

impl TemplateError {
    /// The template layer the error originates from.
    pub fn layer(&self) -> Layer {
        match self {
            TemplateError::Io { .. } | TemplateError::MalformedPlaceholder { .. } => Layer::Implementation,
            TemplateError::Invalid { layer, .. } => *layer,
            TemplateError::MissingPlatformStage { .. } => Layer::Platform,
            TemplateError::UnresolvedSlot { .. } | TemplateError::BlockCycle { .. } => Layer::Machine,
            TemplateError::UnresolvedImplementation { .. } => Layer::Implementation,
            TemplateError::UnresolvedPlaceholder { .. } | TemplateError::ListPlaceholder { .. } => Layer::Instance,
        }
    }
}

fn invalid(layer: Layer, message: impl Into<String>) -> TemplateError {
    TemplateError::Invalid { layer, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowTemplate {
    pub name: String,
    pub stages: Vec<String>,
}

impl WorkflowTemplate {
    pub fn new(name: impl Into<String>, stages: &[&str]) -> Result<Self, TemplateError> {
        let wf = WorkflowTemplate { name: name.into(), stages: stages.iter().map(|s| s.to_string()).collect() };
        wf.validate()?;
        Ok(wf)
    }

    pub fn benchmarking() -> Self {
        WorkflowTemplate::new("benchmark", &DEFAULT_STAGES).expect("default stages are valid")
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.stages.is_empty() {
            return Err(invalid(Layer::Workflow, format!("workflow `{}` has no stages", self.name)));
        }
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if s.trim().is_empty() {
                return Err(invalid(Layer::Workflow, "stage names must be non-empty"));
            }
            if !seen.insert(s) {
                return Err(invalid(Layer::Workflow, format!("stage `{s}` appears twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkeletonLine {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformStageTemplate {
    pub stage: String,
    pub skeleton: Vec<SkeletonLine>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockLine {
    Command(String),
    Block(String),
    Implementation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineBlock {
    pub name: String,
    pub body: Vec<BlockLine>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplementationTemplate {
    pub name: String,
    pub commands: Vec<String>,
}

impl ImplementationTemplate {
    pub fn new(name: impl Into<String>, commands: &[&str]) -> Result<Self, TemplateError> {
        let t = ImplementationTemplate { name: name.into(), commands: commands.iter().map(|c| c.to_string()).collect() };
        for c in &t.commands {
            placeholder::parse(c)?;
        }
        Ok(t)
    }
}

/// Platform stage templates for one platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformLayer {
    pub name: String,
    pub stages: Vec<PlatformStageTemplate>,
}

/// Script blocks for one machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineLayer {
    pub name: String,
    pub blocks: Vec<MachineBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCommands {
    pub stage: String,
    pub commands: Vec<String>,
}

/// A pipeline for a single benchmark run whose commands may still contain
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineBlueprint {
    pub workflow: String,
    pub platform: String,
    pub machine: String,
    pub stages: Vec<StageCommands>,
    pub referenced_keys: BTreeSet<String>,
}

impl PipelineBlueprint {
    pub fn stage_names(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().map(|s| s.stage.as_str())
    }

    pub fn stage(&self, name: &str) -> Option<&StageCommands> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Keys referenced by the commands of one stage.
    pub fn stage_keys(&self, stage: &StageCommands) -> BTreeSet<String> {
        stage
            .commands
            .iter()
            .flat_map(|c| placeholder::keys(c).expect("blueprint placeholders were validated"))
            .collect()
    }
}

/// A fully literal pipeline for one parameter combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInstance {
    pub workflow: String,
    pub platform: String,
    pub machine: String,
    pub combination: ParameterCombination,
    pub stages: Vec<StageCommands>,
}

impl PipelineInstance {
    pub fn stage(&self, name: &str) -> Option<&StageCommands> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

fn lookup_unique<'a, T>(
    layer: Layer,
    items: impl IntoIterator<Item = &'a T>,
    name: impl Fn(&T) -> &str,
) -> Result<BTreeMap<String, &'a T>, TemplateError>
where
    T: 'a,
{
    let mut map = BTreeMap::new();
    for item in items {
        if map.insert(name(item).to_string(), item).is_some() {
            return Err(invalid(layer, format!("`{}` is defined twice", name(item))));
        }
    }
    Ok(map)
}

struct Expander<'a> {
    blocks: BTreeMap<String, &'a MachineBlock>,
    impls: BTreeMap<String, &'a ImplementationTemplate>,
}

impl Expander<'_> {
    fn expand(&self, name: &str, stage: &str, stack: &mut Vec<String>, out: &mut Vec<String>) -> Result<(), TemplateError> {
        let block = self.blocks.get(name).ok_or_else(|| {
            if let Some(parent) = stack.last() {
                invalid(Layer::Machine, format!("block `{parent}` references unknown block `{name}`"))
            } else {
                TemplateError::UnresolvedSlot { stage: stage.to_string(), slot: name.to_string() }
            }
        })?;
        if stack.iter().any(|s| s == name) {
            let mut chain = stack.clone();
            chain.push(name.to_string());
            return Err(TemplateError::BlockCycle { chain });
        }
        stack.push(name.to_string());
        for line in &block.body {
            match line {
                BlockLine::Command(c) => {
                    placeholder::parse(c)?;
                    out.push(c.clone());
                }
                BlockLine::Block(inner) => self.expand(inner, stage, stack, out)?,
                BlockLine::Implementation(i) => {
                    let t = self.impls.get(i).ok_or_else(|| TemplateError::UnresolvedImplementation {
                        block: name.to_string(),
                        name: i.clone(),
                    })?;
                    for c in &t.commands {
                        placeholder::parse(c)?;
                        out.push(c.clone());
                    }
                }
            }
        }
        stack.pop();
        Ok(())
    }
}

/// Specializes a workflow through the platform, machine and implementation
/// layers.
pub fn compose_blueprint(
    workflow: &WorkflowTemplate,
    platform: &PlatformLayer,
    machine: &MachineLayer,
    impls: &[ImplementationTemplate],
) -> Result<PipelineBlueprint, TemplateError> {
    workflow.validate()?;
    let platform_stages = lookup_unique(Layer::Platform, &platform.stages, |t| &t.stage)?;
    let expander = Expander {
        blocks: lookup_unique(Layer::Machine, &machine.blocks, |b| &b.name)?,
        impls: lookup_unique(Layer::Implementation, impls, |t| &t.name)?,
    };

    let mut stages = Vec::with_capacity(workflow.stages.len());
    let mut referenced_keys = BTreeSet::new();
    for stage in &workflow.stages {
        let template = platform_stages
            .get(stage)
            .ok_or_else(|| TemplateError::MissingPlatformStage { stage: stage.clone() })?;
        if template.skeleton.is_empty() {
            return Err(invalid(Layer::Platform, format!("stage `{stage}` has an empty skeleton")));
        }
        let mut commands = Vec::new();
        for line in &template.skeleton {
            match line {
                SkeletonLine::Literal(text) => {
                    placeholder::parse(text)?;
                    commands.push(text.clone());
                }
                SkeletonLine::Slot(name) => expander.expand(name, stage, &mut Vec::new(), &mut commands)?,
            }
        }
        for c in &commands {
            referenced_keys.extend(placeholder::keys(c)?);
        }
        stages.push(StageCommands { stage: stage.clone(), commands });
    }
    Ok(PipelineBlueprint {
        workflow: workflow.name.clone(),
        platform: platform.name.clone(),
        machine: machine.name.clone(),
        stages,
        referenced_keys,
    })
}

/// Fills every placeholder. Combination values shadow config values.
pub fn instantiate(
    bp: &PipelineBlueprint,
    rc: &ResolvedConfig,
    combo: &ParameterCombination,
) -> Result<PipelineInstance, TemplateError> {
    let mut stages = Vec::with_capacity(bp.stages.len());
    for stage in &bp.stages {
        let lookup = |key: &str| -> Result<String, TemplateError> {
            if let Some(v) = combo.get(key) {
                return Ok(v.render());
            }
            match rc.get(key) {
                Some(Entry::Scalar(s)) => Ok(s.render()),
                Some(Entry::List(_)) => {
                    Err(TemplateError::ListPlaceholder { stage: stage.stage.clone(), key: key.to_string() })
                }
                None => Err(TemplateError::UnresolvedPlaceholder { stage: stage.stage.clone(), key: key.to_string() }),
            }
        };
        let commands = stage
            .commands
            .iter()
            .map(|c| placeholder::substitute(c, lookup))
            .collect::<Result<Vec<_>, _>>()?;
        stages.push(StageCommands { stage: stage.stage.clone(), commands });
    }
    Ok(PipelineInstance {
        workflow: bp.workflow.clone(),
        platform: bp.platform.clone(),
        machine: bp.machine.clone(),
        combination: combo.clone(),
        stages,
    })
}

/// Stages that run once for the whole parameter space, followed by stages
/// that run once per combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSplit {
    pub shared: Vec<String>,
    pub fanout: Vec<String>,
}

impl StageSplit {
    pub fn is_shared(&self, stage: &str) -> bool {
        self.shared.iter().any(|s| s == stage)
    }
}

/// The shared part is the longest prefix of stages that references no axis.
pub fn plan_stage_split(bp: &PipelineBlueprint, axes: &[ParameterAxis]) -> StageSplit {
    let axis_keys: BTreeSet<&str> = axes.iter().map(|a| a.key_path.as_str()).collect();
    let boundary = bp
        .stages
        .iter()
        .position(|s| bp.stage_keys(s).iter().any(|k| axis_keys.contains(k.as_str())))
        .unwrap_or(bp.stages.len());
    let names: Vec<String> = bp.stage_names().map(str::to_string).collect();
    StageSplit { shared: names[..boundary].to_vec(), fanout: names[boundary..].to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_document, resolve_chain, Scalar, Schema};

    fn platform(stages: &[(&str, &[&str])]) -> PlatformLayer {
        PlatformLayer {
            name: "p".into(),
            stages: stages
                .iter()
                .map(|(stage, lines)| PlatformStageTemplate {
                    stage: stage.to_string(),
                    skeleton: lines.iter().map(|l| files::parse_skeleton_line(l)).collect(),
                })
                .collect(),
        }
    }

    fn machine(blocks: &[(&str, &[&str])]) -> MachineLayer {
        MachineLayer {
            name: "m".into(),
            blocks: blocks
                .iter()
                .map(|(name, lines)| MachineBlock {
                    name: name.to_string(),
                    body: lines.iter().map(|l| files::parse_block_line(l)).collect(),
                })
                .collect(),
        }
    }

    fn rc(text: &str) -> ResolvedConfig {
        resolve_chain(&[load_document(text, None).unwrap()], &Schema::permissive()).unwrap()
    }

    #[test]
    fn single_slot_substitution() {
        let wf = WorkflowTemplate::new("w", &["Build"]).unwrap();
        let bp = compose_blueprint(
            &wf,
            &platform(&[("Build", &["@block load environment", "make"])]),
            &machine(&[("load environment", &["module load {{env.stack}}"])]),
            &[],
        )
        .unwrap();
        assert_eq!(bp.stages[0].commands, vec!["module load {{env.stack}}", "make"]);
        assert_eq!(bp.referenced_keys, BTreeSet::from(["env.stack".to_string()]));
    }

    #[test]
    fn unresolved_slot() {
        let wf = WorkflowTemplate::new("w", &["Build"]).unwrap();
        let err = compose_blueprint(&wf, &platform(&[("Build", &["@block missing"])]), &machine(&[]), &[]).unwrap_err();
        assert!(matches!(err, TemplateError::UnresolvedSlot { ref slot, .. } if slot == "missing"));
        assert_eq!(err.layer(), Layer::Machine);
    }

    #[test]
    fn missing_platform_stage_and_impl() {
        let wf = WorkflowTemplate::new("w", &["Build", "Run"]).unwrap();
        let err = compose_blueprint(&wf, &platform(&[("Build", &["make"])]), &machine(&[]), &[]).unwrap_err();
        assert_eq!(err, TemplateError::MissingPlatformStage { stage: "Run".into() });

        let wf = WorkflowTemplate::new("w", &["Build"]).unwrap();
        let err = compose_blueprint(
            &wf,
            &platform(&[("Build", &["@block b"])]),
            &machine(&[("b", &["@impl nope"])]),
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::UnresolvedImplementation { .. }));
    }

    #[test]
    fn block_cycles_are_detected() {
        let wf = WorkflowTemplate::new("w", &["Build"]).unwrap();
        let err = compose_blueprint(
            &wf,
            &platform(&[("Build", &["@block a"])]),
            &machine(&[("a", &["x", "@block b"]), ("b", &["@block a"])]),
            &[],
        )
        .unwrap_err();
        assert_eq!(err, TemplateError::BlockCycle { chain: vec!["a".into(), "b".into(), "a".into()] });
    }

    #[test]
    fn nested_blocks_expand_in_declaration_order() {
        // Hand-expanded: outer = [o1, inner..., o2] and inner = [i1, impl(c1, c2)].
        let wf = WorkflowTemplate::new("w", &["Execution"]).unwrap();
        let impls = [ImplementationTemplate::new("run", &["c1 {{run.nodes}}", "c2"]).unwrap()];
        let bp = compose_blueprint(
            &wf,
            &platform(&[("Execution", &["@block outer"])]),
            &machine(&[("outer", &["o1", "@block inner", "o2"]), ("inner", &["i1", "@impl run"])]),
            &impls,
        )
        .unwrap();
        assert_eq!(bp.stages[0].commands, vec!["o1", "i1", "c1 {{run.nodes}}", "c2", "o2"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let wf = WorkflowTemplate::new("w", &["Build"]).unwrap();
        let err = compose_blueprint(
            &wf,
            &platform(&[("Build", &["make"])]),
            &machine(&[("a", &["x"]), ("a", &["y"])]),
            &[],
        )
        .unwrap_err();
        assert_eq!(err.layer(), Layer::Machine);
        assert!(WorkflowTemplate::new("w", &[]).is_err());
        assert!(WorkflowTemplate::new("w", &["A", "A"]).is_err());
        assert!(ImplementationTemplate::new("i", &["x {{"]).is_err());
    }

    #[test]
    fn instantiate_fills_placeholders() {
        let wf = WorkflowTemplate::new("w", &["Build", "Execution"]).unwrap();
        let bp = compose_blueprint(
            &wf,
            &platform(&[("Build", &["module load {{env.stack}}"]), ("Execution", &["srun -N {{run.nodes}} -s {{run.seed}}"])]),
            &machine(&[]),
            &[],
        )
        .unwrap();
        let config = rc("name = \"c\"\nenv.stack = \"gcc/12\"\nrun.nodes = 1\nrun.seed = 5\n");
        let combo = ParameterCombination {
            assignments: BTreeMap::from([("run.nodes".to_string(), Scalar::Int(4))]),
            ordinal: 0,
        };
        let inst = instantiate(&bp, &config, &combo).unwrap();
        assert_eq!(inst.stage("Execution").unwrap().commands, vec!["srun -N 4 -s 5"]);
        assert_eq!(inst.stage("Build").unwrap().commands, vec!["module load gcc/12"]);
        let json = inst.to_canonical_json();
        assert!(!json.contains("{{"));
        assert_eq!(json, instantiate(&bp, &config, &combo).unwrap().to_canonical_json());
    }

    #[test]
    fn instantiate_errors() {
        let wf = WorkflowTemplate::new("w", &["Execution"]).unwrap();
        let bp = compose_blueprint(&wf, &platform(&[("Execution", &["x {{run.missing}}"])]), &machine(&[]), &[]).unwrap();
        let err = instantiate(&bp, &rc("name = \"c\"\na = 1"), &ParameterCombination::empty()).unwrap_err();
        assert!(matches!(err, TemplateError::UnresolvedPlaceholder { ref key, .. } if key == "run.missing"));

        let bp = compose_blueprint(&wf, &platform(&[("Execution", &["x {{xs}}"])]), &machine(&[]), &[]).unwrap();
        let err = instantiate(&bp, &rc("name = \"c\"\nxs = [1, 2]"), &ParameterCombination::empty()).unwrap_err();
        assert!(matches!(err, TemplateError::ListPlaceholder { .. }));
    }

    fn split_fixture(prep: &str) -> PipelineBlueprint {
        let wf = WorkflowTemplate::benchmarking();
        let stages: Vec<(&str, Vec<String>)> = DEFAULT_STAGES
            .iter()
            .map(|s| {
                let line = match *s {
                    "Preparation" => prep.to_string(),
                    "Build" => "build {{env.stack}}".to_string(),
                    "Execution" => "run -N {{run.nodes}}".to_string(),
                    other => format!("echo {other}"),
                };
                (*s, vec![line])
            })
            .collect();
        let platform = PlatformLayer {
            name: "p".into(),
            stages: stages
                .iter()
                .map(|(s, lines)| PlatformStageTemplate {
                    stage: s.to_string(),
                    skeleton: lines.iter().map(|l| SkeletonLine::Literal(l.clone())).collect(),
                })
                .collect(),
        };
        compose_blueprint(&wf, &platform, &machine(&[]), &[]).unwrap()
    }

    fn axis(key: &str) -> ParameterAxis {
        ParameterAxis { key_path: key.into(), values: vec![Scalar::Int(1), Scalar::Int(2)] }
    }

    #[test]
    fn split_at_first_axis_reference() {
        let bp = split_fixture("fetch");
        let split = plan_stage_split(&bp, &[axis("run.nodes")]);
        assert_eq!(split.shared, vec!["Preparation", "Build"]);
        assert_eq!(split.fanout, vec!["Execution", "Transfer", "Annotation", "Analyze", "Plot"]);

        let split = plan_stage_split(&bp, &[]);
        assert_eq!(split.shared.len(), 7);
        assert!(split.fanout.is_empty());

        let bp = split_fixture("fetch {{run.nodes}}");
        let split = plan_stage_split(&bp, &[axis("run.nodes")]);
        assert!(split.shared.is_empty());
        assert_eq!(split.fanout.len(), 7);
    }

    #[test]
    fn machine_changes_do_not_alter_stages() {
        let wf = WorkflowTemplate::benchmarking();
        let p = PlatformLayer {
            name: "p".into(),
            stages: DEFAULT_STAGES
                .iter()
                .map(|s| PlatformStageTemplate { stage: s.to_string(), skeleton: vec![SkeletonLine::Slot("env".into())] })
                .collect(),
        };
        let a = compose_blueprint(&wf, &p, &machine(&[("env", &["a"])]), &[]).unwrap();
        let b = compose_blueprint(&wf, &p, &machine(&[("env", &["b", "c", "d"])]), &[]).unwrap();
        assert_eq!(a.stage_names().collect::<Vec<_>>(), b.stage_names().collect::<Vec<_>>());
    }
}
