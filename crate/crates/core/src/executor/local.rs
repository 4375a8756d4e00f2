use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    admit, CancelReason, CommandRunner, ExecError, Executor, JobControl, JobHandle, JobRequest, JobState, JobStatus,
    MachineProperties,
};

const POLL_INTERVAL: Duration = Duration::from_millis(5);

struct Slots {
    used: Mutex<BTreeMap<String, usize>>,
    freed: Condvar,
}

struct LocalJob {
    status: Arc<Mutex<JobStatus>>,
    control: Arc<JobControl>,
}

/// Runs every job on a thread of its own. Node classes only bound how many
/// jobs of that class run at once; jobs beyond the capacity stay queued.
pub struct LocalExecutor {
    props: MachineProperties,
    runner: Arc<dyn CommandRunner>,
    started: Instant,
    jobs: Mutex<BTreeMap<u64, LocalJob>>,
    slots: Arc<Slots>,
    shut_down: Mutex<bool>,
}

impl LocalExecutor {
    pub fn new(props: MachineProperties, runner: Arc<dyn CommandRunner>) -> Self {
        LocalExecutor {
            props,
            runner,
            started: Instant::now(),
            jobs: Mutex::new(BTreeMap::new()),
            slots: Arc::new(Slots { used: Mutex::new(BTreeMap::new()), freed: Condvar::new() }),
            shut_down: Mutex::new(false),
        }
    }
}

/// Moves `status` to `next` unless it is already terminal.
fn transition(status: &Mutex<JobStatus>, next: JobStatus) -> bool {
    let mut s = status.lock().unwrap();
    if s.state.is_terminal() {
        return false;
    }
    *s = next;
    true
}

impl Executor for LocalExecutor {
    fn submit(&self, req: JobRequest) -> Result<JobHandle, ExecError> {
        if *self.shut_down.lock().unwrap() {
            return Err(ExecError::ShutDown);
        }
        admit(&self.props, &req)?;
        let capacity = self.props.node_classes[&req.node_class].capacity;
        let status = Arc::new(Mutex::new(JobStatus::pending(JobState::Queued)));
        let control = Arc::new(JobControl::default());

        let mut jobs = self.jobs.lock().unwrap();
        let job_id = jobs.len() as u64 + 1;
        jobs.insert(job_id, LocalJob { status: status.clone(), control: control.clone() });
        drop(jobs);

        let (runner, slots) = (self.runner.clone(), self.slots.clone());
        thread::spawn(move || {
            let class = req.node_class.clone();
            {
                let mut used = slots.used.lock().unwrap();
                while *used.get(&class).unwrap_or(&0) >= capacity && !control.is_cancelled() {
                    used = slots.freed.wait_timeout(used, POLL_INTERVAL).unwrap().0;
                }
                if control.is_cancelled() {
                    return;
                }
                *used.entry(class.clone()).or_default() += 1;
            }
            if transition(&status, JobStatus::pending(JobState::Running)) {
                let outcome = runner.run(&req, &control);
                transition(&status, JobStatus::finished(&outcome));
            }
            *slots.used.lock().unwrap().get_mut(&class).unwrap() -= 1;
            slots.freed.notify_all();
        });
        Ok(JobHandle { job_id, submitted_at: self.clock() })
    }

    fn poll(&self, h: &JobHandle) -> Result<JobStatus, ExecError> {
        let jobs = self.jobs.lock().unwrap();
        let job = jobs.get(&h.job_id).ok_or(ExecError::UnknownHandle(h.job_id))?;
        let status = job.status.lock().unwrap().clone();
        Ok(status)
    }

    fn terminate(&self, h: &JobHandle, reason: CancelReason) -> Result<JobStatus, ExecError> {
        let jobs = self.jobs.lock().unwrap();
        let job = jobs.get(&h.job_id).ok_or(ExecError::UnknownHandle(h.job_id))?;
        if transition(&job.status, JobStatus::pending(reason.state())) {
            job.control.cancel();
        }
        let status = job.status.lock().unwrap().clone();
        Ok(status)
    }

    fn step(&self) {
        thread::sleep(POLL_INTERVAL);
    }

    fn clock(&self) -> Duration {
        self.started.elapsed()
    }

    fn shutdown(&self) {
        *self.shut_down.lock().unwrap() = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{Resources, ShellRunner, STDOUT_FILE};
    use std::path::Path;

    fn executor() -> LocalExecutor {
        let props = MachineProperties::local("here");
        let runner = Arc::new(ShellRunner::new(props.allowlisted_env.clone()));
        LocalExecutor::new(props, runner)
    }

    fn req(dir: &Path, commands: &[&str]) -> JobRequest {
        JobRequest {
            commands: commands.iter().map(|c| c.to_string()).collect(),
            resources: Resources::single(),
            working_dir: dir.to_path_buf(),
            env: BTreeMap::new(),
            node_class: "local".into(),
            label: "t".into(),
            requires_internet: true,
        }
    }

    #[test]
    fn runs_and_stays_terminal() {
        let dir = tempfile::tempdir().unwrap();
        let ex = executor();
        let h = ex.submit(req(dir.path(), &["echo hi"])).unwrap();
        let out = ex.wait_all(&[h.clone()], Duration::from_secs(30)).unwrap();
        assert_eq!(out.statuses[0].state, JobState::Succeeded);
        assert_eq!(out.statuses[0].exit_code, Some(0));
        assert_eq!(ex.poll(&h).unwrap(), out.statuses[0]);
        assert_eq!(ex.cancel(&h).unwrap().state, JobState::Succeeded);
        assert_eq!(std::fs::read_to_string(dir.path().join(STDOUT_FILE)).unwrap(), "hi\n");
    }

    #[test]
    fn exit_code_of_first_failure() {
        let dir = tempfile::tempdir().unwrap();
        let ex = executor();
        let h = ex.submit(req(dir.path(), &["true", "sh -c 'exit 7'", "true"])).unwrap();
        let out = ex.wait_all(&[h], Duration::from_secs(30)).unwrap();
        assert_eq!((out.statuses[0].state, out.statuses[0].exit_code), (JobState::Failed, Some(7)));
    }

    #[test]
    fn hung_job_times_out() {
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        let ex = executor();
        let hs = vec![
            ex.submit(req(dirs[0].path(), &["true"])).unwrap(),
            ex.submit(req(dirs[1].path(), &["sleep 0.2"])).unwrap(),
            ex.submit(req(dirs[2].path(), &["sleep 60"])).unwrap(),
        ];
        let started = Instant::now();
        let out = ex.wait_all(&hs, Duration::from_secs(2)).unwrap();
        assert!(out.timed_out);
        let states: Vec<_> = out.statuses.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![JobState::Succeeded, JobState::Succeeded, JobState::TimedOut]);
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn cancel_running_sleep() {
        let dir = tempfile::tempdir().unwrap();
        let ex = executor();
        let h = ex.submit(req(dir.path(), &["sleep 60", "echo after > after.txt"])).unwrap();
        while ex.poll(&h).unwrap().state == JobState::Queued {
            ex.step();
        }
        thread::sleep(Duration::from_millis(100));
        assert_eq!(ex.cancel(&h).unwrap().state, JobState::Cancelled);
        thread::sleep(Duration::from_millis(300));
        assert_eq!(ex.poll(&h).unwrap().state, JobState::Cancelled);
        assert!(!dir.path().join("after.txt").exists());
    }

    #[test]
    fn capacity_queues_extra_jobs() {
        let dirs: Vec<_> = (0..5).map(|_| tempfile::tempdir().unwrap()).collect();
        let ex = executor();
        let hs: Vec<_> = dirs.iter().map(|d| ex.submit(req(d.path(), &["sleep 0.3"])).unwrap()).collect();
        thread::sleep(Duration::from_millis(100));
        let running = hs.iter().filter(|h| ex.poll(h).unwrap().state == JobState::Running).count();
        assert!(running <= 4);
        let out = ex.wait_all(&hs, Duration::from_secs(30)).unwrap();
        assert!(out.statuses.iter().all(|s| s.state == JobState::Succeeded));
    }
}
