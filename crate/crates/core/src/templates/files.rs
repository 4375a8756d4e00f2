use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    compose_blueprint, invalid, BlockLine, ImplementationTemplate, Layer, MachineBlock, MachineLayer, PipelineBlueprint,
    PlatformLayer, PlatformStageTemplate, SkeletonLine, TemplateError, WorkflowTemplate,
};

const BLOCK_MARKER: &str = "@block ";
const IMPL_MARKER: &str = "@impl ";
const RESERVED_DIRS: [&str; 3] = ["platform", "machine", "impl"];

/// Every template found under a `templates/` directory.
///
/// Layout:
///
/// ```text
/// templates/<workflow>/stages              one stage name per line
/// templates/platform/<platform>/<Stage>.tmpl
/// templates/machine/<machine>/<block>.block
/// templates/impl/<name>.impl
/// ```
///
/// In every file blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    pub workflows: BTreeMap<String, WorkflowTemplate>,
    pub platforms: BTreeMap<String, PlatformLayer>,
    pub machines: BTreeMap<String, MachineLayer>,
    pub impls: Vec<ImplementationTemplate>,
}

fn io_err(path: &Path, e: std::io::Error) -> TemplateError {
    TemplateError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn content_lines(path: &Path) -> Result<Vec<String>, TemplateError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Sorted entries of `dir` with the given extension (or all subdirectories
/// when `ext` is `None`). A missing directory is empty.
fn entries(dir: &Path, ext: Option<&str>) -> Result<Vec<(String, PathBuf)>, TemplateError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let keep = match ext {
            None => path.is_dir(),
            Some(ext) => path.is_file() && path.extension().is_some_and(|e| e == ext),
        };
        if !keep {
            continue;
        }
        let stem = if ext.is_some() { path.file_stem() } else { path.file_name() };
        if let Some(stem) = stem.and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn parse_skeleton_line(line: &str) -> SkeletonLine {
    match line.trim_start().strip_prefix(BLOCK_MARKER) {
        Some(name) => SkeletonLine::Slot(name.trim().to_string()),
        None => SkeletonLine::Literal(line.to_string()),
    }
}

pub(crate) fn parse_block_line(line: &str) -> BlockLine {
    let t = line.trim_start();
    if let Some(name) = t.strip_prefix(BLOCK_MARKER) {
        BlockLine::Block(name.trim().to_string())
    } else if let Some(name) = t.strip_prefix(IMPL_MARKER) {
        BlockLine::Implementation(name.trim().to_string())
    } else {
        BlockLine::Command(line.to_string())
    }
}

impl TemplateSet {
    pub fn load(root: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::default();

        for (name, dir) in entries(root, None)? {
            if RESERVED_DIRS.contains(&name.as_str()) {
                continue;
            }
            let stages_file = dir.join("stages");
            if !stages_file.is_file() {
                continue;
            }
            let stages = content_lines(&stages_file)?;
            let wf = WorkflowTemplate { name: name.clone(), stages: stages.iter().map(|s| s.trim().to_string()).collect() };
            wf.validate()?;
            set.workflows.insert(name, wf);
        }

        for (name, dir) in entries(&root.join("platform"), None)? {
            let mut stages = Vec::new();
            for (stage, path) in entries(&dir, Some("tmpl"))? {
                let skeleton: Vec<SkeletonLine> = content_lines(&path)?.iter().map(|l| parse_skeleton_line(l)).collect();
                if skeleton.iter().any(|l| matches!(l, SkeletonLine::Slot(n) if n.is_empty())) {
                    return Err(invalid(Layer::Platform, format!("{}: slot marker without a name", path.display())));
                }
                stages.push(PlatformStageTemplate { stage, skeleton });
            }
            set.platforms.insert(name.clone(), PlatformLayer { name, stages });
        }

        for (name, dir) in entries(&root.join("machine"), None)? {
            let mut blocks = Vec::new();
            for (block, path) in entries(&dir, Some("block"))? {
                let body = content_lines(&path)?.iter().map(|l| parse_block_line(l)).collect();
                blocks.push(MachineBlock { name: block, body });
            }
            set.machines.insert(name.clone(), MachineLayer { name, blocks });
        }

        for (name, path) in entries(&root.join("impl"), Some("impl"))? {
            let commands = content_lines(&path)?;
            let refs: Vec<&str> = commands.iter().map(String::as_str).collect();
            set.impls.push(ImplementationTemplate::new(name, &refs)?);
        }
        Ok(set)
    }

    pub fn workflow(&self, name: &str) -> Result<&WorkflowTemplate, TemplateError> {
        self.workflows
            .get(name)
            .ok_or_else(|| invalid(Layer::Workflow, format!("unknown workflow `{name}`")))
    }

    pub fn platform(&self, name: &str) -> Result<&PlatformLayer, TemplateError> {
        self.platforms
            .get(name)
            .ok_or_else(|| invalid(Layer::Platform, format!("unknown platform `{name}`")))
    }

    pub fn machine(&self, name: &str) -> Result<&MachineLayer, TemplateError> {
        self.machines
            .get(name)
            .ok_or_else(|| invalid(Layer::Machine, format!("no machine templates for `{name}`")))
    }

    pub fn compose(&self, workflow: &str, platform: &str, machine: &str) -> Result<PipelineBlueprint, TemplateError> {
        compose_blueprint(self.workflow(workflow)?, self.platform(platform)?, self.machine(machine)?, &self.impls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, rel: &str, text: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    #[test]
    fn loads_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write(root, "bench/stages", "# order matters\nBuild\n\nExecution\n");
        write(root, "platform/ci/Build.tmpl", "@block load environment\nmake -j\n");
        write(root, "platform/ci/Execution.tmpl", "@block submit job\n");
        write(root, "machine/m1/load environment.block", "module load {{env.stack}}\n");
        write(root, "machine/m1/submit job.block", "@impl run\necho done\n");
        write(root, "impl/run.impl", "srun -N {{run.nodes}} ./sim\n");

        let set = TemplateSet::load(root).unwrap();
        assert_eq!(set.workflow("bench").unwrap().stages, vec!["Build", "Execution"]);
        let bp = set.compose("bench", "ci", "m1").unwrap();
        assert_eq!(bp.stage("Build").unwrap().commands, vec!["module load {{env.stack}}", "make -j"]);
        assert_eq!(bp.stage("Execution").unwrap().commands, vec!["srun -N {{run.nodes}} ./sim", "echo done"]);
        assert!(matches!(set.compose("bench", "ci", "m2"), Err(e) if e.layer() == Layer::Machine));
    }

    #[test]
    fn line_kinds() {
        assert_eq!(parse_skeleton_line("@block x y"), SkeletonLine::Slot("x y".into()));
        assert_eq!(parse_skeleton_line("echo @block"), SkeletonLine::Literal("echo @block".into()));
        assert_eq!(parse_block_line("@impl a"), BlockLine::Implementation("a".into()));
        assert_eq!(parse_block_line("  @block b"), BlockLine::Block("b".into()));
        assert_eq!(parse_block_line("ls"), BlockLine::Command("ls".into()));
    }
}
