use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    admit, CancelReason, CommandRunner, ExecError, Executor, JobControl, JobHandle, JobRequest, JobState, JobStatus,
    MachineProperties,
};

/// One state transition in the simulated scheduler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockEvent {
    pub tick: u64,
    pub job_id: u64,
    pub label: String,
    pub node_class: String,
    pub state: JobState,
}

impl fmt::Display for MockEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t{}", self.tick, self.job_id, self.node_class, self.label, self.state)
    }
}

struct MockJob {
    req: JobRequest,
    ready_at: u64,
    finish_at: u64,
    status: JobStatus,
    /// Outcome of the commands, published when the job finishes.
    pending: Option<JobStatus>,
}

struct State {
    tick: u64,
    rng: ChaCha8Rng,
    next_id: u64,
    jobs: BTreeMap<u64, MockJob>,
    queues: BTreeMap<String, VecDeque<u64>>,
    running: BTreeMap<String, Vec<u64>>,
    events: Vec<MockEvent>,
    shut_down: bool,
}

/// Simulated batch scheduler.
///
/// Time advances only through [`Executor::step`], one tick per call, and
/// `poll` never changes anything. A job submitted at tick `t` with a sampled
/// queue delay `d` becomes eligible at `t + d`; within a node class jobs start
/// strictly in submission order, at most `capacity` at a time. A job's
/// commands run through the [`CommandRunner`] the moment it starts, and it
/// reports its result `run_ticks` later.
pub struct MockExecutor {
    props: MachineProperties,
    runner: Arc<dyn CommandRunner>,
    state: Mutex<State>,
}

impl MockExecutor {
    pub fn new(props: MachineProperties, runner: Arc<dyn CommandRunner>) -> Self {
        let state = State {
            tick: 0,
            rng: ChaCha8Rng::seed_from_u64(props.seed),
            next_id: 1,
            jobs: BTreeMap::new(),
            queues: BTreeMap::new(),
            running: BTreeMap::new(),
            events: Vec::new(),
            shut_down: false,
        };
        MockExecutor { props, runner, state: Mutex::new(state) }
    }

    pub fn properties(&self) -> &MachineProperties {
        &self.props
    }

    pub fn tick(&self) -> u64 {
        self.state.lock().unwrap().tick
    }

    /// Every state transition so far, in order.
    pub fn events(&self) -> Vec<MockEvent> {
        self.state.lock().unwrap().events.clone()
    }

    /// Labels of all submitted jobs, in submission order.
    pub fn submissions(&self) -> Vec<String> {
        let st = self.state.lock().unwrap();
        st.jobs.values().map(|j| j.req.label.clone()).collect()
    }

    pub fn running_count(&self, class: &str) -> usize {
        self.state.lock().unwrap().running.get(class).map_or(0, Vec::len)
    }

    fn record(st: &mut State, job_id: u64, state: JobState) {
        let job = &st.jobs[&job_id];
        let event = MockEvent {
            tick: st.tick,
            job_id,
            label: job.req.label.clone(),
            node_class: job.req.node_class.clone(),
            state,
        };
        st.events.push(event);
    }

    fn schedule(&self, st: &mut State) {
        let tick = st.tick;
        // Finish first so freed slots are usable in the same tick.
        let finishing: Vec<u64> = st
            .running
            .values()
            .flatten()
            .copied()
            .filter(|id| st.jobs[id].finish_at <= tick)
            .collect();
        for id in finishing {
            let job = st.jobs.get_mut(&id).unwrap();
            job.status = job.pending.take().expect("running job has an outcome");
            let (class, state) = (job.req.node_class.clone(), job.status.state);
            st.running.get_mut(&class).unwrap().retain(|j| *j != id);
            Self::record(st, id, state);
        }

        let classes: Vec<String> = st.queues.keys().cloned().collect();
        for class in classes {
            let capacity = self.props.node_classes[&class].capacity;
            loop {
                let running = st.running.get(&class).map_or(0, Vec::len);
                let Some(&head) = st.queues[&class].front() else { break };
                if running >= capacity || st.jobs[&head].ready_at > tick {
                    break;
                }
                st.queues.get_mut(&class).unwrap().pop_front();
                let req = st.jobs[&head].req.clone();
                let outcome = self.runner.run(&req, &JobControl::default());
                let run_ticks = outcome.ticks.unwrap_or(self.props.node_classes[&class].run_ticks).max(1);
                let job = st.jobs.get_mut(&head).unwrap();
                job.status = JobStatus::pending(JobState::Running);
                job.finish_at = tick + run_ticks;
                job.pending = Some(JobStatus::finished(&outcome));
                st.running.entry(class.clone()).or_default().push(head);
                Self::record(st, head, JobState::Running);
            }
        }
    }
}

impl Executor for MockExecutor {
    fn submit(&self, req: JobRequest) -> Result<JobHandle, ExecError> {
        let mut st = self.state.lock().unwrap();
        if st.shut_down {
            return Err(ExecError::ShutDown);
        }
        admit(&self.props, &req)?;
        let [lo, hi] = self.props.node_classes[&req.node_class].queue_delay;
        let delay = st.rng.random_range(lo..=hi);
        let id = st.next_id;
        st.next_id += 1;
        let class = req.node_class.clone();
        let ready_at = st.tick + delay;
        st.jobs.insert(
            id,
            MockJob { req, ready_at, finish_at: u64::MAX, status: JobStatus::pending(JobState::Queued), pending: None },
        );
        st.queues.entry(class).or_default().push_back(id);
        Self::record(&mut st, id, JobState::Queued);
        let submitted_at = self.props_tick(st.tick);
        Ok(JobHandle { job_id: id, submitted_at })
    }

    fn poll(&self, h: &JobHandle) -> Result<JobStatus, ExecError> {
        let st = self.state.lock().unwrap();
        st.jobs.get(&h.job_id).map(|j| j.status.clone()).ok_or(ExecError::UnknownHandle(h.job_id))
    }

    fn terminate(&self, h: &JobHandle, reason: CancelReason) -> Result<JobStatus, ExecError> {
        let mut st = self.state.lock().unwrap();
        let job = st.jobs.get_mut(&h.job_id).ok_or(ExecError::UnknownHandle(h.job_id))?;
        if job.status.state.is_terminal() {
            return Ok(job.status.clone());
        }
        let was = job.status.state;
        job.status = JobStatus::pending(reason.state());
        job.pending = None;
        let class = job.req.node_class.clone();
        let status = job.status.clone();
        match was {
            JobState::Queued => st.queues.get_mut(&class).unwrap().retain(|j| *j != h.job_id),
            _ => st.running.get_mut(&class).unwrap().retain(|j| *j != h.job_id),
        }
        Self::record(&mut st, h.job_id, status.state);
        Ok(status)
    }

    fn step(&self) {
        let mut st = self.state.lock().unwrap();
        st.tick += 1;
        self.schedule(&mut st);
    }

    fn clock(&self) -> Duration {
        self.props_tick(self.state.lock().unwrap().tick)
    }

    fn shutdown(&self) {
        self.state.lock().unwrap().shut_down = true;
    }
}

impl MockExecutor {
    fn props_tick(&self, tick: u64) -> Duration {
        Duration::from_secs_f64(self.props.tick_seconds * tick as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{NodeClass, Resources, RunOutcome};
    use std::path::PathBuf;

    struct FixedRunner(i32);

    impl CommandRunner for FixedRunner {
        fn run(&self, _req: &JobRequest, _c: &JobControl) -> RunOutcome {
            RunOutcome { exit_code: self.0, stdout: None, stderr: None, ticks: None }
        }
    }

    fn props(capacity: usize, delay: [u64; 2], run_ticks: u64) -> MachineProperties {
        let mut p = MachineProperties::local("mock");
        p.backend = crate::executor::BackendKind::Mock;
        p.seed = 11;
        p.internet_access_node_classes = vec!["login".into()];
        p.default_node_class = None;
        p.node_classes = BTreeMap::from([
            ("login".to_string(), NodeClass::default()),
            ("compute".to_string(), NodeClass { capacity, queue_delay: delay, max_nodes: 4, run_ticks, ..NodeClass::default() }),
        ]);
        p
    }

    fn req(label: &str, class: &str) -> JobRequest {
        JobRequest {
            commands: vec!["true".into()],
            resources: Resources::single(),
            working_dir: PathBuf::from("/nonexistent"),
            env: BTreeMap::new(),
            node_class: class.into(),
            label: label.into(),
            requires_internet: false,
        }
    }

    #[test]
    fn queued_for_exactly_delay_polls() {
        let ex = MockExecutor::new(props(1, [3, 3], 2), Arc::new(FixedRunner(0)));
        let h = ex.submit(req("a", "compute")).unwrap();
        let mut queued_polls = 0;
        loop {
            let s = ex.poll(&h).unwrap();
            if s.state != JobState::Queued {
                break;
            }
            queued_polls += 1;
            ex.step();
        }
        assert_eq!(queued_polls, 3);
        assert_eq!(ex.poll(&h).unwrap().state, JobState::Running);
        ex.step();
        ex.step();
        let s = ex.poll(&h).unwrap();
        assert_eq!((s.state, s.exit_code), (JobState::Succeeded, Some(0)));
        ex.step();
        assert_eq!(ex.poll(&h).unwrap(), s);
    }

    #[test]
    fn third_job_waits_for_a_free_slot() {
        let ex = MockExecutor::new(props(2, [0, 0], 3), Arc::new(FixedRunner(0)));
        let hs: Vec<_> = ["a", "b", "c"].iter().map(|l| ex.submit(req(l, "compute")).unwrap()).collect();
        ex.step();
        let states: Vec<_> = hs.iter().map(|h| ex.poll(h).unwrap().state).collect();
        assert_eq!(states, vec![JobState::Running, JobState::Running, JobState::Queued]);
        let out = ex.wait_all(&hs, Duration::from_secs(100)).unwrap();
        assert!(!out.timed_out);
        let trace: Vec<String> = ex.events().iter().map(|e| e.to_string()).collect();
        assert_eq!(
            trace,
            vec![
                "0\t1\tcompute\ta\tqueued",
                "0\t2\tcompute\tb\tqueued",
                "0\t3\tcompute\tc\tqueued",
                "1\t1\tcompute\ta\trunning",
                "1\t2\tcompute\tb\trunning",
                "4\t1\tcompute\ta\tsucceeded",
                "4\t2\tcompute\tb\tsucceeded",
                "4\t3\tcompute\tc\trunning",
                "7\t3\tcompute\tc\tsucceeded",
            ]
        );
    }

    #[test]
    fn admission_checks() {
        let ex = MockExecutor::new(props(1, [0, 0], 1), Arc::new(FixedRunner(0)));
        assert_eq!(ex.submit(req("x", "gpu")), Err(ExecError::UnknownNodeClass("gpu".into())));
        let mut r = req("x", "compute");
        r.requires_internet = true;
        assert!(matches!(ex.submit(r), Err(ExecError::NoInternet { .. })));
        let mut r = req("x", "compute");
        r.resources.nodes = 5;
        assert!(matches!(ex.submit(r), Err(ExecError::ResourceLimit { .. })));
        let mut r = req("x", "compute");
        r.resources.nodes = 0;
        assert!(matches!(ex.submit(r), Err(ExecError::InvalidRequest(_))));
        assert!(matches!(ex.poll(&JobHandle { job_id: 99, submitted_at: Duration::ZERO }), Err(ExecError::UnknownHandle(99))));
        ex.shutdown();
        assert_eq!(ex.submit(req("x", "compute")), Err(ExecError::ShutDown));
    }

    #[test]
    fn cancel_semantics() {
        let ex = MockExecutor::new(props(1, [0, 0], 5), Arc::new(FixedRunner(1)));
        let a = ex.submit(req("a", "compute")).unwrap();
        let b = ex.submit(req("b", "compute")).unwrap();
        ex.step();
        assert_eq!(ex.cancel(&b).unwrap().state, JobState::Cancelled);
        let out = ex.wait_all(&[a.clone()], Duration::from_secs(10)).unwrap();
        assert_eq!(out.statuses[0].state, JobState::Failed);
        assert_eq!(out.statuses[0].exit_code, Some(1));
        assert_eq!(ex.cancel(&a).unwrap().state, JobState::Failed);
        assert_eq!(ex.poll(&b).unwrap().exit_code, None);
    }

    #[test]
    fn wait_all_times_out_in_simulated_time() {
        let ex = MockExecutor::new(props(1, [0, 0], 50), Arc::new(FixedRunner(0)));
        let h = ex.submit(req("slow", "compute")).unwrap();
        let out = ex.wait_all(&[h], Duration::from_secs(5)).unwrap();
        assert!(out.timed_out);
        assert_eq!(out.statuses[0].state, JobState::TimedOut);
        assert_eq!(ex.running_count("compute"), 0);
        assert!(ex.wait_all(&[], Duration::ZERO).unwrap().statuses.is_empty());
    }
}
