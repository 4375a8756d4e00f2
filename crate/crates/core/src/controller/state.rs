use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{io_err, ControllerError, PipelineRun, EXECUTION_STAGE};
use crate::config::ResolvedConfig;
use crate::executor::MachineProperties;
use crate::provenance::metadata::{format_timestamp, monotone_now};
use crate::templates::{PipelineInstance, StageSplit};

pub const EVENTS_FILE: &str = "events.log";
pub const ARTIFACTS_DIR: &str = "artifacts";
const RUN_FILE: &str = "run.json";
const INSTANCES_DIR: &str = "instances";
const ATTEMPT_STATE: &str = "attempt";
const RECORD_PREFIX: &str = "record ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    Shared,
    Ordinal(usize),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Shared => f.write_str("SHARED"),
            Slot::Ordinal(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SHARED" => Ok(Slot::Shared),
            n => n.parse().map(Slot::Ordinal).map_err(|_| format!("bad ordinal `{n}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StageKey {
    pub stage: String,
    pub slot: Slot,
}

impl StageKey {
    pub fn shared(stage: &str) -> Self {
        StageKey { stage: stage.to_string(), slot: Slot::Shared }
    }

    pub fn at(stage: &str, ordinal: usize) -> Self {
        StageKey { stage: stage.to_string(), slot: Slot::Ordinal(ordinal) }
    }
}

impl fmt::Display for StageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.stage, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    Pending,
    Running,
    Succeeded,
    Failed,
    Skipped,
}

impl StageState {
    pub fn is_terminal(self) -> bool {
        matches!(self, StageState::Succeeded | StageState::Failed | StageState::Skipped)
    }

    /// Allowed moves within one attempt. Running to running records a retry.
    pub fn can_move_to(self, next: StageState) -> bool {
        use StageState::*;
        matches!((self, next), (Pending, Running) | (Pending, Skipped) | (Running, Running) | (Running, Succeeded) | (Running, Failed))
    }

    pub fn name(self) -> &'static str {
        match self {
            StageState::Pending => "pending",
            StageState::Running => "running",
            StageState::Succeeded => "succeeded",
            StageState::Failed => "failed",
            StageState::Skipped => "skipped",
        }
    }
}

impl fmt::Display for StageState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [StageState::Pending, StageState::Running, StageState::Succeeded, StageState::Failed, StageState::Skipped]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown state `{s}`"))
    }
}

/// One line of `events.log`: timestamp, run id, stage, ordinal, new state,
/// detail, separated by tabs.
///
/// Resuming writes a marker line with stage `*`, ordinal `-`, state
/// `attempt` and the attempt number as detail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub timestamp: String,
    pub run_id: String,
    pub stage: String,
    pub ordinal: String,
    pub new_state: String,
    pub detail: String,
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

impl Event {
    pub fn to_line(&self) -> String {
        [&self.timestamp, &self.run_id, &self.stage, &self.ordinal, &self.new_state, &self.detail]
            .iter()
            .map(|f| clean(f))
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub fn parse(line: &str) -> Option<Event> {
        let f: Vec<&str> = line.splitn(6, '\t').collect();
        let [timestamp, run_id, stage, ordinal, new_state, detail] = f.as_slice() else { return None };
        Some(Event {
            timestamp: timestamp.to_string(),
            run_id: run_id.to_string(),
            stage: stage.to_string(),
            ordinal: ordinal.to_string(),
            new_state: new_state.to_string(),
            detail: detail.to_string(),
        })
    }

    fn is_attempt(&self) -> bool {
        self.new_state == ATTEMPT_STATE
    }

    /// Record id carried by an Execution success event.
    pub fn record_id(&self) -> Option<&str> {
        (self.stage == EXECUTION_STAGE && self.new_state == "succeeded")
            .then(|| self.detail.strip_prefix(RECORD_PREFIX))
            .flatten()
    }
}

pub(crate) fn record_detail(id: &str) -> String {
    format!("{RECORD_PREFIX}{id}")
}

pub fn run_dir(work_dir: &Path, run_id: &str) -> PathBuf {
    work_dir.join("runs").join(run_id)
}

/// Appends events; every write is flushed before the call returns.
pub(crate) struct EventLog {
    run_id: String,
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    pub(crate) fn open(work_dir: &Path, run_id: &str) -> Result<Self, ControllerError> {
        let path = run_dir(work_dir, run_id).join(EVENTS_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(EventLog { run_id: run_id.to_string(), path, file: Mutex::new(file) })
    }

    fn write(&self, stage: &str, ordinal: &str, state: &str, detail: &str) -> Result<(), ControllerError> {
        let ev = Event {
            timestamp: format_timestamp(&monotone_now()),
            run_id: self.run_id.clone(),
            stage: stage.to_string(),
            ordinal: ordinal.to_string(),
            new_state: state.to_string(),
            detail: detail.to_string(),
        };
        let mut f = self.file.lock().unwrap();
        writeln!(f, "{}", ev.to_line()).and_then(|_| f.sync_data()).map_err(io_err(&self.path))
    }

    pub(crate) fn state(&self, key: &StageKey, state: StageState, detail: &str) -> Result<(), ControllerError> {
        self.write(&key.stage, &key.slot.to_string(), state.name(), detail)
    }

    pub(crate) fn attempt(&self, n: u32) -> Result<(), ControllerError> {
        self.write("*", "-", ATTEMPT_STATE, &n.to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct RunFile {
    run_id: String,
    requester: String,
    machine: MachineProperties,
    resolved: ResolvedConfig,
    stages: Vec<String>,
    split: StageSplit,
}

/// Writes the run description and its instances, once.
pub fn save_run(work_dir: &Path, run: &PipelineRun) -> Result<(), ControllerError> {
    let dir = run_dir(work_dir, &run.run_id);
    let run_file = dir.join(RUN_FILE);
    if run_file.is_file() {
        return Ok(());
    }
    let inst_dir = dir.join(INSTANCES_DIR);
    fs::create_dir_all(&inst_dir).map_err(io_err(&inst_dir))?;
    fs::create_dir_all(dir.join(ARTIFACTS_DIR)).map_err(io_err(&dir))?;
    for inst in &run.instances {
        let p = inst_dir.join(format!("{}.json", inst.combination.ordinal));
        fs::write(&p, inst.to_canonical_json()).map_err(io_err(&p))?;
    }
    let header = RunFile {
        run_id: run.run_id.clone(),
        requester: run.requester.clone(),
        machine: run.machine.clone(),
        resolved: run.resolved.clone(),
        stages: run.stages.clone(),
        split: run.split.clone(),
    };
    let text = serde_json::to_string_pretty(&header).expect("run header serializes");
    // Written last: its presence marks a complete description.
    let tmp = dir.join(format!("{RUN_FILE}.tmp"));
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &run_file).map_err(io_err(&run_file))
}

pub fn read_events(work_dir: &Path, run_id: &str) -> Result<Vec<Event>, ControllerError> {
    let path = run_dir(work_dir, run_id).join(EVENTS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    // A line still being written has no newline yet; leave it for the next read.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .map(|l| {
            Event::parse(l).ok_or_else(|| ControllerError::RunState {
                run_id: run_id.to_string(),
                message: format!("malformed event line `{l}`"),
            })
        })
        .collect()
}

/// Point-in-time view of a run, rebuilt from its event log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSnapshot {
    pub run_id: String,
    pub attempt: u32,
    pub states: BTreeMap<StageKey, StageState>,
    pub record_ids: BTreeMap<usize, String>,
}

impl RunSnapshot {
    /// Replays `events` over `keys`, all pending at first. Rejects any move
    /// the state machine does not allow.
    pub fn replay(run_id: &str, keys: &[StageKey], events: &[Event]) -> Result<RunSnapshot, ControllerError> {
        let bad = |message: String| ControllerError::RunState { run_id: run_id.to_string(), message };
        let mut states: BTreeMap<StageKey, StageState> = keys.iter().map(|k| (k.clone(), StageState::Pending)).collect();
        let mut record_ids = BTreeMap::new();
        let mut attempt = 0;
        for ev in events {
            if ev.is_attempt() {
                attempt = ev.detail.parse().map_err(|_| bad(format!("bad attempt marker `{}`", ev.detail)))?;
                for st in states.values_mut() {
                    if *st != StageState::Succeeded {
                        *st = StageState::Pending;
                    }
                }
                continue;
            }
            let slot: Slot = ev.ordinal.parse().map_err(bad)?;
            let key = StageKey { stage: ev.stage.clone(), slot };
            let next: StageState = ev.new_state.parse().map_err(bad)?;
            let current = states.get_mut(&key).ok_or_else(|| bad(format!("event for unknown stage {key}")))?;
            if !current.can_move_to(next) {
                return Err(bad(format!("{key}: {current} -> {next} is not allowed")));
            }
            *current = next;
            if let Some(id) = ev.record_id() {
                // A shared Execution stage runs the single, empty combination.
                let o = match slot {
                    Slot::Shared => 0,
                    Slot::Ordinal(o) => o,
                };
                record_ids.insert(o, id.to_string());
            }
        }
        Ok(RunSnapshot { run_id: run_id.to_string(), attempt, states, record_ids })
    }

    pub fn all_terminal(&self) -> bool {
        self.states.values().all(|s| s.is_terminal())
    }
}

fn scan_files(root: &Path, dir: &Path, out: &mut BTreeSet<PathBuf>) {
    let Ok(read) = fs::read_dir(dir) else { return };
    for entry in read.flatten() {
        let p = entry.path();
        if p.is_dir() {
            scan_files(root, &p, out);
        } else if let Ok(rel) = p.strip_prefix(root) {
            out.insert(rel.to_path_buf());
        }
    }
}

/// Files under `artifacts/<stage>/`, relative to `artifacts/`.
pub(crate) fn scan_artifacts(work_dir: &Path, run_id: &str, stages: &[String]) -> BTreeMap<String, BTreeSet<PathBuf>> {
    let root = run_dir(work_dir, run_id).join(ARTIFACTS_DIR);
    stages
        .iter()
        .map(|s| {
            let mut files = BTreeSet::new();
            scan_files(&root, &root.join(s), &mut files);
            (s.clone(), files)
        })
        .filter(|(_, f)| !f.is_empty())
        .collect()
}

pub fn load_run(work_dir: &Path, run_id: &str) -> Result<PipelineRun, ControllerError> {
    let dir = run_dir(work_dir, run_id);
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|_| ControllerError::UnknownRun(run_id.to_string()))?;
    let header: RunFile = serde_json::from_str(&text)
        .map_err(|e| ControllerError::RunState { run_id: run_id.to_string(), message: format!("run.json: {e}") })?;
    let mut instances = Vec::new();
    let inst_dir = dir.join(INSTANCES_DIR);
    let mut ordinal = 0;
    loop {
        let p = inst_dir.join(format!("{ordinal}.json"));
        if !p.is_file() {
            break;
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let inst: PipelineInstance = serde_json::from_str(&text)
            .map_err(|e| ControllerError::RunState { run_id: run_id.to_string(), message: format!("{}: {e}", p.display()) })?;
        instances.push(inst);
        ordinal += 1;
    }
    let mut run = PipelineRun {
        run_id: header.run_id,
        requester: header.requester,
        machine: header.machine,
        resolved: header.resolved,
        stages: header.stages,
        split: header.split,
        instances,
        stage_states: BTreeMap::new(),
        record_ids: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        attempt: 0,
    };
    let snap = RunSnapshot::replay(run_id, &run.keys(), &read_events(work_dir, run_id)?)?;
    run.stage_states = snap.states;
    run.record_ids = snap.record_ids;
    run.attempt = snap.attempt;
    run.artifacts = scan_artifacts(work_dir, run_id, &run.stages);
    Ok(run)
}

pub fn status(work_dir: &Path, run_id: &str) -> Result<RunSnapshot, ControllerError> {
    let run = load_run(work_dir, run_id)?;
    Ok(RunSnapshot { run_id: run.run_id, attempt: run.attempt, states: run.stage_states, record_ids: run.record_ids })
}

/// Run ids under `work_dir`, oldest first.
pub fn list_runs(work_dir: &Path) -> Result<Vec<String>, ControllerError> {
    let dir = work_dir.join("runs");
    let read = match fs::read_dir(&dir) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&dir)(e)),
    };
    let mut ids: Vec<String> = read
        .flatten()
        .filter(|e| e.path().join(RUN_FILE).is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(stage: &str, ordinal: &str, state: &str, detail: &str) -> Event {
        Event {
            timestamp: "t".into(),
            run_id: "r".into(),
            stage: stage.into(),
            ordinal: ordinal.into(),
            new_state: state.into(),
            detail: detail.into(),
        }
    }

    #[test]
    fn event_lines_round_trip() {
        let e = ev("Build", "SHARED", "failed", "exit\t2\nbad");
        let back = Event::parse(&e.to_line()).unwrap();
        assert_eq!(back.detail, "exit 2 bad");
        assert_eq!(back.stage, "Build");
        assert!(Event::parse("too\tfew").is_none());
    }

    #[test]
    fn replay_enforces_the_state_machine() {
        let keys = vec![StageKey::shared("Build"), StageKey::at("Execution", 0)];
        let ok = [
            ev("Build", "SHARED", "running", ""),
            ev("Build", "SHARED", "succeeded", ""),
            ev("Execution", "0", "running", ""),
            ev("Execution", "0", "succeeded", "record X1"),
        ];
        let snap = RunSnapshot::replay("r", &keys, &ok).unwrap();
        assert!(snap.all_terminal());
        assert_eq!(snap.record_ids[&0], "X1");

        let backwards = [ev("Build", "SHARED", "running", ""), ev("Build", "SHARED", "succeeded", ""), ev("Build", "SHARED", "running", "")];
        assert!(RunSnapshot::replay("r", &keys, &backwards).is_err());
        assert!(RunSnapshot::replay("r", &keys, &[ev("Nope", "SHARED", "running", "")]).is_err());
    }

    #[test]
    fn attempt_marker_reopens_unfinished_stages() {
        let keys = vec![StageKey::shared("Build"), StageKey::at("Execution", 0)];
        let events = [
            ev("Build", "SHARED", "running", ""),
            ev("Build", "SHARED", "succeeded", ""),
            ev("Execution", "0", "running", ""),
            ev("*", "-", "attempt", "2"),
        ];
        let snap = RunSnapshot::replay("r", &keys, &events).unwrap();
        assert_eq!(snap.attempt, 2);
        assert_eq!(snap.states[&StageKey::shared("Build")], StageState::Succeeded);
        assert_eq!(snap.states[&StageKey::at("Execution", 0)], StageState::Pending);
    }
}
