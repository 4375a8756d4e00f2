//! Job execution backends.
//!
//! Two backends implement [`Executor`]: [`LocalExecutor`] runs jobs as shell
//! processes on the current host, [`MockExecutor`] emulates a batch scheduler
//! in simulated ticks (queue delay, per-class capacity, node classes with or
//! without internet access). Both delegate the actual command execution to a
//! [`CommandRunner`].

mod local;
mod machine;
mod mock;
mod runner;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::LocalExecutor;
pub use machine::{BackendKind, MachineProperties, NodeClass};
pub use mock::{MockEvent, MockExecutor};
pub use runner::{CommandRunner, JobControl, RunOutcome, ShellRunner, STDERR_FILE, STDOUT_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub nodes: u32,
    pub tasks_per_node: u32,
    pub threads_per_task: u32,
}

impl Resources {
    pub fn single() -> Self {
        Resources { nodes: 1, tasks_per_node: 1, threads_per_task: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub commands: Vec<String>,
    pub resources: Resources,
    pub working_dir: PathBuf,
    pub env: BTreeMap<String, String>,
    pub node_class: String,
    /// Free-form tag recorded in scheduler logs, e.g. `Build/shared`.
    pub label: String,
    pub requires_internet: bool,
}

impl JobRequest {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.commands.is_empty() {
            return Err(ExecError::InvalidRequest("a job needs at least one command".into()));
        }
        let r = self.resources;
        if r.nodes == 0 || r.tasks_per_node == 0 || r.threads_per_task == 0 {
            return Err(ExecError::InvalidRequest(format!(
                "resources must all be >= 1 (nodes {}, tasks/node {}, threads/task {})",
                r.nodes, r.tasks_per_node, r.threads_per_task
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: u64,
    /// Backend clock reading at submission.
    pub submitted_at: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
    TimedOut,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Queued | JobState::Running)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Succeeded => "succeeded",
            JobState::Failed => "failed",
            JobState::Cancelled => "cancelled",
            JobState::TimedOut => "timed_out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    /// Present exactly when the job succeeded or failed.
    pub exit_code: Option<i32>,
    pub stdout: Option<PathBuf>,
    pub stderr: Option<PathBuf>,
}

impl JobStatus {
    pub(crate) fn pending(state: JobState) -> Self {
        JobStatus { state, exit_code: None, stdout: None, stderr: None }
    }

    pub(crate) fn finished(outcome: &RunOutcome) -> Self {
        JobStatus {
            state: if outcome.exit_code == 0 { JobState::Succeeded } else { JobState::Failed },
            exit_code: Some(outcome.exit_code),
            stdout: outcome.stdout.clone(),
            stderr: outcome.stderr.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelReason {
    User,
    Timeout,
}

impl CancelReason {
    fn state(self) -> JobState {
        match self {
            CancelReason::User => JobState::Cancelled,
            CancelReason::Timeout => JobState::TimedOut,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("invalid job request: {0}")]
    InvalidRequest(String),
    #[error("unknown node class `{0}`")]
    UnknownNodeClass(String),
    #[error("node class `{class}` offers no internet access")]
    NoInternet { class: String },
    #[error("resources exceed the limits of node class `{class}`: {message}")]
    ResourceLimit { class: String, message: String },
    #[error("backend has been shut down")]
    ShutDown,
    #[error("unknown job handle {0}")]
    UnknownHandle(u64),
    #[error("machine `{machine}`: {message}")]
    Machine { machine: String, message: String },
}

/// Statuses collected by [`Executor::wait_all`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitOutcome {
    pub statuses: Vec<JobStatus>,
    /// Whether the timeout elapsed; unfinished jobs were cancelled and are
    /// reported as `timed_out`.
    pub timed_out: bool,
}

pub trait Executor: Send + Sync {
    fn submit(&self, req: JobRequest) -> Result<JobHandle, ExecError>;

    fn poll(&self, h: &JobHandle) -> Result<JobStatus, ExecError>;

    /// Stops a job. Queued jobs never start, running jobs are terminated,
    /// terminal jobs are left untouched.
    fn terminate(&self, h: &JobHandle, reason: CancelReason) -> Result<JobStatus, ExecError>;

    fn cancel(&self, h: &JobHandle) -> Result<JobStatus, ExecError> {
        self.terminate(h, CancelReason::User)
    }

    /// Lets time pass: one tick for simulated backends, a short sleep otherwise.
    fn step(&self);

    /// Time elapsed on the backend's clock.
    fn clock(&self) -> Duration;

    /// Rejects further submissions.
    fn shutdown(&self);

    fn wait_all(&self, hs: &[JobHandle], timeout: Duration) -> Result<WaitOutcome, ExecError> {
        let start = self.clock();
        loop {
            let statuses = hs.iter().map(|h| self.poll(h)).collect::<Result<Vec<_>, _>>()?;
            if statuses.iter().all(|s| s.state.is_terminal()) {
                return Ok(WaitOutcome { statuses, timed_out: false });
            }
            if self.clock().saturating_sub(start) >= timeout {
                let statuses = hs
                    .iter()
                    .zip(statuses)
                    .map(|(h, s)| if s.state.is_terminal() { Ok(s) } else { self.terminate(h, CancelReason::Timeout) })
                    .collect::<Result<Vec<_>, _>>()?;
                return Ok(WaitOutcome { statuses, timed_out: true });
            }
            self.step();
        }
    }
}

/// Checks a request against a machine's node classes.
pub(crate) fn admit(props: &MachineProperties, req: &JobRequest) -> Result<(), ExecError> {
    req.validate()?;
    let class = props
        .node_classes
        .get(&req.node_class)
        .ok_or_else(|| ExecError::UnknownNodeClass(req.node_class.clone()))?;
    if req.requires_internet && !props.has_internet(&req.node_class) {
        return Err(ExecError::NoInternet { class: req.node_class.clone() });
    }
    let r = req.resources;
    let limit = |what: &str, got: u32, max: u32| {
        Err(ExecError::ResourceLimit { class: req.node_class.clone(), message: format!("{what} {got} > {max}") })
    };
    if r.nodes > class.max_nodes {
        return limit("nodes", r.nodes, class.max_nodes);
    }
    if let Some(max) = class.max_tasks_per_node.filter(|m| r.tasks_per_node > *m) {
        return limit("tasks per node", r.tasks_per_node, max);
    }
    if let Some(max) = class.max_threads_per_task.filter(|m| r.threads_per_task > *m) {
        return limit("threads per task", r.threads_per_task, max);
    }
    Ok(())
}

/// Builds the backend a machine file asks for.
pub fn executor_for(props: &MachineProperties) -> Arc<dyn Executor> {
    let runner = Arc::new(ShellRunner::new(props.allowlisted_env.clone()));
    match props.backend {
        BackendKind::Local => Arc::new(LocalExecutor::new(props.clone(), runner)),
        BackendKind::Mock => Arc::new(MockExecutor::new(props.clone(), runner)),
    }
}
