use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use super::JobRequest;

pub const STDOUT_FILE: &str = "stdout.log";
pub const STDERR_FILE: &str = "stderr.log";

/// Cancellation hook shared between a backend and a running job.
#[derive(Debug, Default)]
pub struct JobControl {
    cancelled: AtomicBool,
    pgid: Mutex<Option<i32>>,
}

impl JobControl {
    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    /// Marks the job cancelled and kills the process group of the command
    /// currently running, if any.
    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
        if let Some(pgid) = *self.pgid.lock().unwrap() {
            // SAFETY: plain syscall on a process group we created.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stdout: Option<PathBuf>,
    pub stderr: Option<PathBuf>,
    /// Simulated duration override for the mock backend.
    pub ticks: Option<u64>,
}

/// Executes a job's command list. Shared by the local and mock backends.
pub trait CommandRunner: Send + Sync {
    fn run(&self, req: &JobRequest, control: &JobControl) -> RunOutcome;
}

/// Runs each command with `sh -c` inside the job's working directory,
/// stopping at the first non-zero exit status.
///
/// The environment starts empty; allowlisted variables are copied from the
/// controller's environment and the request's own variables are laid on top.
#[derive(Debug, Clone)]
pub struct ShellRunner {
    pub allowlist: Vec<String>,
}

impl ShellRunner {
    pub fn new(allowlist: Vec<String>) -> Self {
        ShellRunner { allowlist }
    }

    fn open_log(path: &PathBuf) -> std::io::Result<File> {
        OpenOptions::new().create(true).append(true).open(path)
    }
}

impl CommandRunner for ShellRunner {
    fn run(&self, req: &JobRequest, control: &JobControl) -> RunOutcome {
        let out_path = req.working_dir.join(STDOUT_FILE);
        let err_path = req.working_dir.join(STDERR_FILE);
        let outcome = |exit_code| RunOutcome {
            exit_code,
            stdout: Some(out_path.clone()),
            stderr: Some(err_path.clone()),
            ticks: None,
        };
        if fs::create_dir_all(&req.working_dir).is_err() {
            return RunOutcome { exit_code: 126, stdout: None, stderr: None, ticks: None };
        }
        for command in &req.commands {
            if control.is_cancelled() {
                return outcome(137);
            }
            let (stdout, stderr) = match (Self::open_log(&out_path), Self::open_log(&err_path)) {
                (Ok(o), Ok(e)) => (o, e),
                _ => return outcome(126),
            };
            let mut cmd = Command::new("sh");
            cmd.arg("-c")
                .arg(command)
                .current_dir(&req.working_dir)
                .env_clear()
                .stdin(Stdio::null())
                .stdout(stdout)
                .stderr(stderr)
                .process_group(0);
            for key in &self.allowlist {
                if let Ok(v) = std::env::var(key) {
                    cmd.env(key, v);
                }
            }
            cmd.envs(&req.env);
            let mut child = match cmd.spawn() {
                Ok(c) => c,
                Err(e) => {
                    if let Ok(mut f) = Self::open_log(&err_path) {
                        let _ = writeln!(f, "failed to start `{command}`: {e}");
                    }
                    return outcome(127);
                }
            };
            *control.pgid.lock().unwrap() = Some(child.id() as i32);
            // A cancel that raced the spawn would have missed the new group.
            if control.is_cancelled() {
                control.cancel();
            }
            let status = child.wait();
            *control.pgid.lock().unwrap() = None;
            let code = match status {
                Ok(s) => s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0)),
                Err(_) => 126,
            };
            if code != 0 {
                return outcome(code);
            }
        }
        outcome(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::Resources;
    use std::collections::BTreeMap;

    fn request(dir: &std::path::Path, commands: &[&str]) -> JobRequest {
        JobRequest {
            commands: commands.iter().map(|c| c.to_string()).collect(),
            resources: Resources::single(),
            working_dir: dir.to_path_buf(),
            env: BTreeMap::from([("JOB_VAR".to_string(), "v".to_string())]),
            node_class: "local".into(),
            label: "t".into(),
            requires_internet: false,
        }
    }

    #[test]
    fn fail_fast_returns_last_status() {
        let dir = tempfile::tempdir().unwrap();
        let runner = ShellRunner::new(vec!["PATH".into()]);
        let out = runner.run(&request(dir.path(), &["echo one", "exit 3", "echo never"]), &JobControl::default());
        assert_eq!(out.exit_code, 3);
        let log = fs::read_to_string(dir.path().join(STDOUT_FILE)).unwrap();
        assert_eq!(log, "one\n");
    }

    #[test]
    fn environment_is_allowlisted() {
        let dir = tempfile::tempdir().unwrap();
        let runner = ShellRunner::new(vec!["PATH".into()]);
        let out = runner.run(&request(dir.path(), &["echo \"$JOB_VAR:${HOME:-none}\""]), &JobControl::default());
        assert_eq!(out.exit_code, 0);
        assert_eq!(fs::read_to_string(dir.path().join(STDOUT_FILE)).unwrap(), "v:none\n");
    }
}
