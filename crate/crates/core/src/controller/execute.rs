use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::state::{record_detail, run_dir, save_run, scan_artifacts, EventLog, Slot, StageKey, StageState, ARTIFACTS_DIR};
use super::{io_err, ControllerError, PipelineRun, EXECUTION_STAGE, INTERNET_STAGES, LOCAL_STAGES, RESOURCE_KEYS};
use crate::config::{Entry, ParameterCombination, Scalar};
use crate::executor::{executor_for, CancelReason, Executor, JobHandle, JobRequest, JobState, MachineProperties, Resources};
use crate::provenance::{collect_metadata, Archive, ExecutionContext, NewRecord};

/// Directory under the run holding one `<stage>.log` per stage, one line
/// per submitted job.
pub const COMMAND_LOG: &str = "commands";
const LOCAL_CLASS: &str = "local";

pub struct ExecuteOptions {
    pub work_dir: PathBuf,
    pub archive: Archive,
    /// Runs the local stages. A fresh local backend is used when absent.
    pub local: Option<Arc<dyn Executor>>,
    /// Per job, on the clock of the backend running it, queue time included.
    pub job_timeout: Option<Duration>,
    /// Extra submissions after a failed per-combination job.
    pub retries: u32,
    /// Added to every job's environment.
    pub env: BTreeMap<String, String>,
}

impl ExecuteOptions {
    pub fn new(work_dir: impl Into<PathBuf>, archive: Archive) -> Self {
        ExecuteOptions { work_dir: work_dir.into(), archive, local: None, job_timeout: None, retries: 0, env: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationReport {
    pub ordinal: usize,
    pub combination: ParameterCombination,
    /// Succeeded only if every stage did; skipped if a shared stage failed.
    pub state: StageState,
    pub record_id: Option<String>,
    pub failed_stage: Option<String>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub machine: String,
    pub attempt: u32,
    pub shared: Vec<(String, StageState)>,
    /// The failed shared stage and why it failed.
    pub shared_failure: Option<(String, String)>,
    pub combinations: Vec<CombinationReport>,
    /// From the first start to the last finish of the stage's jobs.
    pub stage_durations: BTreeMap<String, Duration>,
}

impl RunReport {
    pub fn record_ids(&self) -> Vec<&str> {
        self.combinations.iter().filter_map(|c| c.record_id.as_deref()).collect()
    }

    pub fn succeeded(&self) -> bool {
        self.shared.iter().all(|(_, s)| *s == StageState::Succeeded)
            && self.combinations.iter().all(|c| c.state == StageState::Succeeded)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Backend {
    Machine,
    Local,
}

struct Active {
    lane: usize,
    key: StageKey,
    handle: JobHandle,
    backend: Backend,
    submissions: u32,
    working_dir: PathBuf,
    env: BTreeMap<String, String>,
    node_class: String,
    request: JobRequest,
}

struct Driver<'a> {
    run: &'a mut PipelineRun,
    machine: &'a dyn Executor,
    local: Arc<dyn Executor>,
    opts: &'a ExecuteOptions,
    log: EventLog,
    run_dir: PathBuf,
    archive_root: PathBuf,
    spans: BTreeMap<String, (Instant, Instant)>,
    /// Last failure per key, for the report.
    details: BTreeMap<StageKey, String>,
}

fn slot_dir(slot: Slot) -> String {
    match slot {
        Slot::Shared => "shared".to_string(),
        Slot::Ordinal(o) => o.to_string(),
    }
}

fn positive(entry: Option<Scalar>, key: &str) -> Result<Option<u32>, String> {
    match entry {
        None => Ok(None),
        Some(Scalar::Int(n)) if n >= 1 && n <= u32::MAX as i64 => Ok(Some(n as u32)),
        Some(other) => Err(format!("{key} must be a positive integer, found `{}`", other.render())),
    }
}

fn collect_raw(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_raw(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).expect("under base");
            let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(name, fs::read(&p)?);
        }
    }
    Ok(())
}

impl Driver<'_> {
    fn set(&mut self, key: &StageKey, state: StageState, detail: &str) -> Result<(), ControllerError> {
        let current = self.run.state(key);
        debug_assert!(current.can_move_to(state), "{key}: {current} -> {state}");
        self.log.state(key, state, detail)?;
        self.run.stage_states.insert(key.clone(), state);
        if !detail.is_empty() && matches!(state, StageState::Failed) {
            self.details.insert(key.clone(), detail.to_string());
        }
        Ok(())
    }

    fn touch_span(&mut self, stage: &str) {
        let now = Instant::now();
        self.spans.entry(stage.to_string()).and_modify(|s| s.1 = now).or_insert((now, now));
    }

    fn lookup(&self, key: &StageKey, path: &str) -> Option<Scalar> {
        let ordinal = match key.slot {
            Slot::Shared => 0,
            Slot::Ordinal(o) => o,
        };
        let combo = &self.run.instances[ordinal].combination;
        combo.get(path).cloned().or_else(|| match self.run.resolved.get(path) {
            Some(Entry::Scalar(s)) => Some(s.clone()),
            _ => None,
        })
    }

    fn resources(&self, key: &StageKey) -> Result<Resources, String> {
        let fallback = self.run.machine.stage_nodes.get(&key.stage).copied().unwrap_or(1);
        if key.stage != EXECUTION_STAGE {
            return Ok(Resources { nodes: fallback, ..Resources::single() });
        }
        let [nodes, tasks, threads] = RESOURCE_KEYS.map(|k| positive(self.lookup(key, k), k));
        Ok(Resources {
            nodes: nodes?.unwrap_or(fallback),
            tasks_per_node: tasks?.unwrap_or(1),
            threads_per_task: threads?.unwrap_or(1),
        })
    }

    fn commands(&self, key: &StageKey) -> Vec<String> {
        let ordinal = match key.slot {
            Slot::Shared => 0,
            Slot::Ordinal(o) => o,
        };
        self.run.instances[ordinal].stage(&key.stage).map(|s| s.commands.clone()).unwrap_or_default()
    }

    fn log_commands(&self, key: &StageKey, submission: u32, commands: &[String]) -> Result<(), ControllerError> {
        let dir = self.run_dir.join(COMMAND_LOG);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.log", key.stage));
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        writeln!(f, "{}\t{}\t{}", key.slot, submission, commands.join(" ; ").replace('\n', " ")).map_err(io_err(&path))
    }

    fn request(&self, key: &StageKey) -> Result<(JobRequest, Backend), String> {
        let local = LOCAL_STAGES.contains(&key.stage.as_str());
        let node_class = if local {
            LOCAL_CLASS.to_string()
        } else {
            self.run.machine.node_class_for(&key.stage).map_err(|e| e.to_string())?.to_string()
        };
        let working_dir = self.run_dir.join(ARTIFACTS_DIR).join(&key.stage).join(slot_dir(key.slot));
        let mut env = BTreeMap::from([
            ("BENCHFORGE_RUN_ID".to_string(), self.run.run_id.clone()),
            ("BENCHFORGE_RUN_DIR".to_string(), self.run_dir.display().to_string()),
            ("BENCHFORGE_ARTIFACTS".to_string(), self.run_dir.join(ARTIFACTS_DIR).display().to_string()),
            ("BENCHFORGE_ARCHIVE".to_string(), self.archive_root.display().to_string()),
            ("BENCHFORGE_STAGE".to_string(), key.stage.clone()),
            ("BENCHFORGE_ORDINAL".to_string(), slot_dir(key.slot)),
        ]);
        let ordinal = match key.slot {
            Slot::Shared => 0,
            Slot::Ordinal(o) => o,
        };
        if let Some(id) = self.run.record_ids.get(&ordinal) {
            env.insert("BENCHFORGE_RECORD_ID".to_string(), id.clone());
        }
        env.extend(self.opts.env.iter().map(|(k, v)| (k.clone(), v.clone())));
        let req = JobRequest {
            commands: self.commands(key),
            resources: self.resources(key)?,
            working_dir,
            env,
            node_class,
            label: format!("{}/{}", key.stage, key.slot),
            requires_internet: INTERNET_STAGES.contains(&key.stage.as_str()),
        };
        Ok((req, if local { Backend::Local } else { Backend::Machine }))
    }

    fn executor(&self, b: Backend) -> &dyn Executor {
        match b {
            Backend::Machine => self.machine,
            Backend::Local => self.local.as_ref(),
        }
    }

    /// Starts the key's job. `Ok(None)` means the stage already finished:
    /// nothing to run, or the submission was refused.
    fn start(&mut self, lane: usize, key: &StageKey) -> Result<Option<Active>, ControllerError> {
        self.set(key, StageState::Running, "")?;
        self.touch_span(&key.stage);
        let (req, backend) = match self.request(key) {
            Ok(r) => r,
            Err(msg) => {
                self.set(key, StageState::Failed, &msg)?;
                return Ok(None);
            }
        };
        if req.commands.is_empty() {
            self.set(key, StageState::Succeeded, "no commands")?;
            return Ok(None);
        }
        self.submit(lane, key, req, backend, 1)
    }

    fn submit(&mut self, lane: usize, key: &StageKey, req: JobRequest, backend: Backend, n: u32) -> Result<Option<Active>, ControllerError> {
        self.log_commands(key, n, &req.commands)?;
        match self.executor(backend).submit(req.clone()) {
            Ok(handle) => Ok(Some(Active {
                lane,
                key: key.clone(),
                handle,
                backend,
                submissions: n,
                working_dir: req.working_dir.clone(),
                env: req.env.clone(),
                node_class: req.node_class.clone(),
                request: req,
            })),
            Err(e) => {
                self.set(key, StageState::Failed, &format!("submission refused: {e}"))?;
                Ok(None)
            }
        }
    }

    fn archive(&self, job: &Active) -> Result<String, String> {
        let ordinal = match job.key.slot {
            Slot::Shared => 0,
            Slot::Ordinal(o) => o,
        };
        let mut raw_files = BTreeMap::new();
        collect_raw(&job.working_dir, &job.working_dir, &mut raw_files).map_err(|e| e.to_string())?;
        if job.backend == Backend::Local {
            return Err("the Execution stage must run on the target machine".into());
        }
        let machine = &self.run.machine;
        let mut env: BTreeMap<String, String> = machine
            .allowlisted_env
            .iter()
            .filter_map(|k| std::env::var(k).ok().map(|v| (k.clone(), v)))
            .collect();
        env.extend(job.env.iter().map(|(k, v)| (k.clone(), v.clone())));
        let metadata = collect_metadata(&ExecutionContext { machine, node_class: &job.node_class, env: &env });
        let rec = NewRecord {
            run_id: self.run.run_id.clone(),
            requester: self.run.requester.clone(),
            config_name: self.run.resolved.name.clone(),
            combination: self.run.instances[ordinal].combination.clone(),
            resolved_config: self.run.resolved.to_canonical_json(),
            raw_files,
            metadata,
        };
        self.opts.archive.store(&rec).map_err(|e| e.to_string())
    }

    /// Handles a terminal job. Returns a resubmitted job, if any, and whether
    /// the lane may go on.
    fn finish(&mut self, job: Active, state: JobState, exit_code: Option<i32>) -> Result<(Option<Active>, bool), ControllerError> {
        self.touch_span(&job.key.stage);
        if state == JobState::Succeeded {
            if job.key.stage == EXECUTION_STAGE {
                match self.archive(&job) {
                    Ok(id) => {
                        let ordinal = match job.key.slot {
                            Slot::Shared => 0,
                            Slot::Ordinal(o) => o,
                        };
                        self.run.record_ids.insert(ordinal, id.clone());
                        self.set(&job.key, StageState::Succeeded, &record_detail(&id))?;
                    }
                    Err(e) => {
                        self.set(&job.key, StageState::Failed, &format!("archiving failed: {e}"))?;
                        return Ok((None, false));
                    }
                }
            } else {
                self.set(&job.key, StageState::Succeeded, "")?;
            }
            return Ok((None, true));
        }
        let cause = match (state, exit_code) {
            (JobState::TimedOut, _) => "timed out".to_string(),
            (JobState::Cancelled, _) => "cancelled".to_string(),
            (_, Some(code)) => format!("exit code {code}"),
            _ => state.to_string(),
        };
        let retryable = matches!(job.key.slot, Slot::Ordinal(_));
        if retryable && job.submissions <= self.opts.retries {
            self.set(&job.key, StageState::Running, &format!("retry {} after {cause}", job.submissions))?;
            let (lane, key, backend, n, req) = (job.lane, job.key.clone(), job.backend, job.submissions + 1, job.request);
            return match self.submit(lane, &key, req, backend, n)? {
                Some(next) => Ok((Some(next), true)),
                None => Ok((None, false)),
            };
        }
        self.set(&job.key, StageState::Failed, &cause)?;
        Ok((None, false))
    }

    fn skip(&mut self, keys: &[StageKey], why: &str) -> Result<(), ControllerError> {
        for k in keys {
            if self.run.state(k) == StageState::Pending {
                self.set(k, StageState::Skipped, why)?;
            }
        }
        Ok(())
    }

    /// Runs each lane's stages in order; lanes proceed independently. A
    /// failure skips the rest of its own lane. Returns whether every stage
    /// succeeded.
    fn drive(&mut self, lanes: &[Vec<StageKey>]) -> Result<bool, ControllerError> {
        let mut cursor = vec![0usize; lanes.len()];
        let mut busy = vec![false; lanes.len()];
        let mut done = vec![false; lanes.len()];
        let mut active: Vec<Active> = Vec::new();
        let mut all_ok = true;
        loop {
            for lane in 0..lanes.len() {
                while !busy[lane] && !done[lane] {
                    let Some(key) = lanes[lane].get(cursor[lane]) else {
                        done[lane] = true;
                        break;
                    };
                    match self.run.state(key) {
                        StageState::Succeeded => cursor[lane] += 1,
                        StageState::Pending => match self.start(lane, key)? {
                            Some(job) => {
                                busy[lane] = true;
                                active.push(job);
                            }
                            None if self.run.state(key) == StageState::Succeeded => cursor[lane] += 1,
                            None => {
                                all_ok = false;
                                done[lane] = true;
                                self.skip(&lanes[lane][cursor[lane] + 1..], &format!("{key} failed"))?;
                            }
                        },
                        other => {
                            return Err(ControllerError::RunState {
                                run_id: self.run.run_id.clone(),
                                message: format!("{key} is {other} at the start of its turn"),
                            })
                        }
                    }
                }
            }
            if active.is_empty() {
                return Ok(all_ok);
            }

            let mut still = Vec::with_capacity(active.len());
            for job in std::mem::take(&mut active) {
                let exec = self.executor(job.backend);
                let mut status = exec.poll(&job.handle)?;
                if !status.state.is_terminal() {
                    if let Some(limit) = self.opts.job_timeout {
                        if exec.clock().saturating_sub(job.handle.submitted_at) >= limit {
                            status = exec.terminate(&job.handle, CancelReason::Timeout)?;
                        }
                    }
                }
                if !status.state.is_terminal() {
                    still.push(job);
                    continue;
                }
                let lane = job.lane;
                let key = job.key.clone();
                let (next, ok) = self.finish(job, status.state, status.exit_code)?;
                match (next, ok) {
                    (Some(next), _) => still.push(next),
                    (None, true) => {
                        busy[lane] = false;
                        cursor[lane] += 1;
                    }
                    (None, false) => {
                        all_ok = false;
                        busy[lane] = false;
                        done[lane] = true;
                        self.skip(&lanes[lane][cursor[lane] + 1..], &format!("{key} failed"))?;
                    }
                }
            }
            active = still;
            if active.iter().any(|j| j.backend == Backend::Machine) {
                self.machine.step();
            } else if !active.is_empty() {
                self.local.step();
            }
        }
    }
}

/// Executes every unfinished stage of `run`: shared stages once, in order,
/// then the per-combination stages of all combinations side by side.
///
/// Calling it again on a run loaded with [`super::load_run`] resumes it: a
/// new attempt starts, stages that succeeded are kept, everything else runs
/// again.
pub fn execute_run(run: &mut PipelineRun, exec: &dyn Executor, opts: &ExecuteOptions) -> Result<RunReport, ControllerError> {
    fs::create_dir_all(&opts.work_dir).map_err(io_err(&opts.work_dir))?;
    let work_dir = opts.work_dir.canonicalize().map_err(io_err(&opts.work_dir))?;
    save_run(&work_dir, run)?;
    let log = EventLog::open(&work_dir, &run.run_id)?;

    run.attempt += 1;
    log.attempt(run.attempt)?;
    for st in run.stage_states.values_mut() {
        if *st != StageState::Succeeded {
            *st = StageState::Pending;
        }
    }

    let local = match &opts.local {
        Some(l) => l.clone(),
        None => executor_for(&MachineProperties::local("localhost")),
    };
    let archive_root = opts.archive.root().canonicalize().unwrap_or_else(|_| opts.archive.root().to_path_buf());
    let run_path = run_dir(&work_dir, &run.run_id);
    let shared_lane: Vec<StageKey> = run.split.shared.iter().map(|s| StageKey::shared(s)).collect();
    let fanout_lanes: Vec<Vec<StageKey>> = (0..run.instances.len())
        .map(|o| run.split.fanout.iter().map(|s| StageKey::at(s, o)).collect())
        .collect();

    let mut driver = Driver {
        run,
        machine: exec,
        local,
        opts,
        log,
        run_dir: run_path,
        archive_root,
        spans: BTreeMap::new(),
        details: BTreeMap::new(),
    };
    let shared_ok = driver.drive(std::slice::from_ref(&shared_lane))?;
    if shared_ok {
        driver.drive(&fanout_lanes)?;
    } else {
        let failed = shared_lane.iter().find(|k| driver.run.state(k) == StageState::Failed).cloned();
        let why = match failed.as_ref().map(|k| (k, driver.details.get(k))) {
            Some((k, Some(d))) => format!("shared stage {k} failed: {d}"),
            Some((k, None)) => format!("shared stage {k} failed"),
            None => String::new(),
        };
        for lane in &fanout_lanes {
            driver.skip(lane, &why)?;
        }
    }

    let details = std::mem::take(&mut driver.details);
    let spans = std::mem::take(&mut driver.spans);
    let run = driver.run;
    run.artifacts = scan_artifacts(&work_dir, &run.run_id, &run.stages);

    let shared = run.split.shared.iter().map(|s| (s.clone(), run.state(&StageKey::shared(s)))).collect();
    let shared_failure = shared_lane
        .iter()
        .find(|k| run.state(k) == StageState::Failed)
        .map(|k| (k.stage.clone(), details.get(k).cloned().unwrap_or_default()));
    let combinations = run
        .instances
        .iter()
        .enumerate()
        .map(|(o, inst)| {
            let lane = &fanout_lanes[o];
            let states: Vec<StageState> = lane.iter().map(|k| run.state(k)).collect();
            let failed = lane.iter().find(|k| run.state(k) == StageState::Failed);
            let shared_failed = run.split.shared.iter().any(|s| run.state(&StageKey::shared(s)) != StageState::Succeeded);
            let state = if failed.is_some() {
                StageState::Failed
            } else if shared_failed || states.contains(&StageState::Skipped) {
                StageState::Skipped
            } else if states.iter().all(|s| *s == StageState::Succeeded) {
                StageState::Succeeded
            } else {
                StageState::Pending
            };
            CombinationReport {
                ordinal: o,
                combination: inst.combination.clone(),
                state,
                record_id: run.record_ids.get(&o).cloned(),
                failed_stage: failed.map(|k| k.stage.clone()),
                detail: failed.and_then(|k| details.get(k).cloned()),
            }
        })
        .collect();
    Ok(RunReport {
        run_id: run.run_id.clone(),
        machine: run.machine.name.clone(),
        attempt: run.attempt,
        shared,
        shared_failure,
        combinations,
        stage_durations: spans.into_iter().map(|(k, (a, b))| (k, b.duration_since(a))).collect(),
    })
}
