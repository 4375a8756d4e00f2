use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use benchforge::config::Scalar;
use benchforge::controller::{
    build_run, execute_run, load_run, read_events, rebuild_from_snapshot, run_dir, save_run, status, ControllerError,
    ExecuteOptions, PipelineRun, RunRequest, RunSnapshot, Slot, StageKey, StageState, Workspace, COMMAND_LOG,
    OVERRIDE_DOCUMENT,
};
use benchforge::executor::{executor_for, MockExecutor, ShellRunner};
use benchforge::provenance::Archive;
use benchforge::templates::Layer;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    work: PathBuf,
    archive: Archive,
    marker: PathBuf,
}

fn write(root: &Path, rel: &str, text: &str) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, text).unwrap();
}

const MACHINE: &str = r#"
backend = "mock"
seed = 11
tick_seconds = 60.0
internet_access_node_classes = ["login"]
default_node_class = "login"

[node_classes.login]
capacity = 1

[node_classes.compute]
capacity = 3
max_nodes = 4
queue_delay = [0, 4]
run_ticks = 2

[stage_node_class]
Build = "compute"
Execution = "compute"
"#;

const EXECUTION: &str = r#"test ! -e "{{test.marker}}-{{run.nodes}}-{{run.seed}}"
if [ -e "{{test.marker}}-flaky" ] && [ ! -e tried ]; then touch tried; exit 1; fi
cp "$BENCHFORGE_ARTIFACTS/Build/shared/build.out" .
printf 'construction 0.5\nupdate {{run.nodes}}\ncollocate 0.25\ncommunicate 0.125\ndeliver {{run.seed}}\nmodel_time 2\n' > timers
"#;

/// Three node counts by two seeds on two mock machines. A job fails when a
/// marker file named after it exists.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let marker = dir.path().join("marker");
    write(
        &root,
        "configs/base.toml",
        &format!("name = \"base\"\n[run]\nseed = 1\ntasks_per_node = 1\n[test]\nmarker = \"{}\"\n", marker.display()),
    );
    write(
        &root,
        "configs/sweep.toml",
        "name = \"sweep\"\nextends = \"base\"\n[experiment.axes.run]\nnodes = [1, 2, 3]\nseed = [1, 2]\n",
    );
    write(&root, "templates/benchmark/stages", "Preparation\nBuild\nExecution\nAnalyze\n");
    for stage in ["Preparation", "Build", "Execution", "Analyze"] {
        write(&root, &format!("templates/platform/ci/{stage}.tmpl"), &format!("@block {}\n", stage.to_lowercase()));
    }
    for m in ["m1", "m2"] {
        write(&root, &format!("machines/{m}.toml"), MACHINE);
        for stage in ["preparation", "build", "execution", "analyze"] {
            write(&root, &format!("templates/machine/{m}/{stage}.block"), &format!("@impl {stage}\n"));
        }
    }
    write(&root, "templates/impl/preparation.impl", "echo fetched > sources\n");
    write(
        &root,
        "templates/impl/build.impl",
        "test ! -e \"{{test.marker}}-build\"\ncp \"$BENCHFORGE_ARTIFACTS/Preparation/shared/sources\" .\necho built > build.out\n",
    );
    write(&root, "templates/impl/execution.impl", EXECUTION);
    write(
        &root,
        "templates/impl/analyze.impl",
        "test -n \"$BENCHFORGE_RECORD_ID\"\ncat \"$BENCHFORGE_ARTIFACTS/Execution/$BENCHFORGE_ORDINAL/timers\" > seen\n",
    );
    let archive = Archive::open(dir.path().join("archive")).unwrap();
    let work = dir.path().join("work");
    Fixture { root, work, archive, marker, _dir: dir }
}

impl Fixture {
    fn workspace(&self) -> Workspace {
        Workspace::open(&self.root).unwrap()
    }

    fn build(&self) -> PipelineRun {
        let req = RunRequest::new("sweep", &["m1"]);
        build_run(&req, &self.workspace()).unwrap().remove(0)
    }

    fn mark(&self, suffix: &str) -> PathBuf {
        let p = PathBuf::from(format!("{}-{suffix}", self.marker.display()));
        fs::write(&p, "").unwrap();
        p
    }

    fn options(&self) -> ExecuteOptions {
        ExecuteOptions::new(&self.work, self.archive.clone())
    }

    fn command_log(&self, run_id: &str, stage: &str) -> Vec<String> {
        let p = run_dir(&self.work, run_id).join(COMMAND_LOG).join(format!("{stage}.log"));
        fs::read_to_string(p).map(|t| t.lines().map(str::to_string).collect()).unwrap_or_default()
    }
}

fn mock(run: &PipelineRun) -> MockExecutor {
    MockExecutor::new(run.machine.clone(), Arc::new(ShellRunner::new(run.machine.allowlisted_env.clone())))
}

#[test]
fn one_run_per_machine_one_instance_per_combination() {
    let fx = fixture();
    let runs = build_run(&RunRequest::new("sweep", &["m1", "m2"]), &fx.workspace()).unwrap();
    assert_eq!(runs.len(), 2);
    assert_ne!(runs[0].run_id, runs[1].run_id);
    for run in &runs {
        assert_eq!(run.instances.len(), 6);
        assert_eq!(run.split.shared, vec!["Preparation", "Build"]);
        assert_eq!(run.split.fanout, vec!["Execution", "Analyze"]);
        assert!(run.stage_states.values().all(|s| *s == StageState::Pending));
        assert_eq!(run.stage_states.len(), 2 + 2 * 6);
    }
}

#[test]
fn request_errors_name_the_problem() {
    let fx = fixture();
    let ws = fx.workspace();
    assert!(matches!(build_run(&RunRequest::new("sweep", &["nowhere"]), &ws), Err(ControllerError::UnknownMachine(_))));
    assert!(matches!(build_run(&RunRequest::new("sweep", &[]), &ws), Err(ControllerError::InvalidRequest(_))));
    assert!(matches!(
        build_run(&RunRequest::new("sweep", &["m1", "m1"]), &ws),
        Err(ControllerError::InvalidRequest(_))
    ));
    assert!(matches!(build_run(&RunRequest::new("missing", &["m1"]), &ws), Err(ControllerError::UnknownConfig(_))));

    fs::remove_file(fx.root.join("templates/impl/execution.impl")).unwrap();
    let err = build_run(&RunRequest::new("sweep", &["m1"]), &fx.workspace()).unwrap_err();
    assert_eq!(err.layer(), Some(Layer::Implementation));
    assert!(err.is_user_error());
    assert!(err.to_string().starts_with("implementation layer"), "{err}");
}

#[test]
fn overrides_carry_their_own_provenance() {
    let fx = fixture();
    let req = RunRequest::new("sweep", &["m1"]).with_override("run.tasks_per_node", "99");
    let run = build_run(&req, &fx.workspace()).unwrap().remove(0);
    assert_eq!(run.resolved.provenance["run.tasks_per_node"], OVERRIDE_DOCUMENT);
    assert_eq!(run.resolved.get("run.tasks_per_node").and_then(|e| e.as_scalar()), Some(&Scalar::Int(99)));
    assert_eq!(run.resolved.provenance["run.seed"], "base");
}

#[test]
fn building_twice_gives_identical_instances() {
    let fx = fixture();
    let (a, b) = (fx.build(), fx.build());
    assert_ne!(a.run_id, b.run_id);
    assert_eq!(a.instances_json(), b.instances_json());
    for json in a.instances_json() {
        assert!(!json.contains("{{"), "placeholder left in {json}");
    }
}

#[test]
fn full_sweep_archives_one_record_per_combination() {
    let fx = fixture();
    let mut run = fx.build();
    let exec = mock(&run);
    let report = execute_run(&mut run, &exec, &fx.options()).unwrap();
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(report.record_ids().len(), 6);
    assert_eq!(fx.command_log(&run.run_id, "Preparation").len(), 1);
    assert_eq!(fx.command_log(&run.run_id, "Build").len(), 1);
    assert_eq!(fx.command_log(&run.run_id, "Execution").len(), 6);
    let executions = exec.submissions().iter().filter(|l| l.starts_with("Execution/")).count();
    assert_eq!(executions, 6);
    // Analyze runs locally, never through the batch queue.
    assert!(exec.submissions().iter().all(|l| !l.starts_with("Analyze/")));

    for c in &report.combinations {
        let id = c.record_id.as_deref().unwrap();
        let rec = fx.archive.fetch(id).unwrap();
        assert_eq!(rec.run_id, run.run_id);
        assert_eq!(rec.combination, c.combination);
        assert_eq!(rec.raw_files["build.out"], b"built\n");
        let timers = String::from_utf8(rec.raw_files["timers"].clone()).unwrap();
        let nodes = c.combination.get("run.nodes").unwrap().render();
        assert!(timers.contains(&format!("update {nodes}\n")));
        assert_eq!(rec.metadata.machine, "m1");
        assert_eq!(rec.metadata.node_class, "compute");
        assert!(rec.metadata.captured_env.keys().all(|k| run.machine.allowlisted_env.contains(k)));
        let seen = run_dir(&fx.work, &run.run_id).join(format!("artifacts/Analyze/{}/seen", c.ordinal));
        assert_eq!(fs::read_to_string(seen).unwrap(), timers);
    }

    let snap = status(&fx.work, &run.run_id).unwrap();
    assert!(snap.all_terminal());
    assert_eq!(snap.record_ids.len(), 6);
    assert!(run.artifacts["Build"].contains(Path::new("Build/shared/build.out")));
}

#[test]
fn failed_shared_stage_skips_every_combination() {
    let fx = fixture();
    fx.mark("build");
    let mut run = fx.build();
    let report = {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &fx.options()).unwrap()
    };
    assert_eq!(
        report.shared,
        vec![("Preparation".into(), StageState::Succeeded), ("Build".into(), StageState::Failed)]
    );
    let (stage, why) = report.shared_failure.clone().unwrap();
    assert_eq!(stage, "Build");
    assert!(why.contains("exit"), "{why}");
    assert!(report.record_ids().is_empty());
    assert!(report.combinations.iter().all(|c| c.state == StageState::Skipped));
    assert!(fx.command_log(&run.run_id, "Execution").is_empty());
    assert!(fx.archive.list().unwrap().is_empty());
}

#[test]
fn failed_combination_leaves_the_others_alone() {
    let fx = fixture();
    // Last axis varies fastest: ordinal 3 is nodes = 2, seed = 2.
    fx.mark("2-2");
    let mut run = fx.build();
    let report = {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &fx.options()).unwrap()
    };
    assert_eq!(report.record_ids().len(), 5);
    for c in &report.combinations {
        if c.ordinal == 3 {
            assert_eq!(c.state, StageState::Failed);
            assert_eq!(c.failed_stage.as_deref(), Some("Execution"));
            assert_eq!(c.detail.as_deref(), Some("exit code 1"));
            assert!(c.record_id.is_none());
            assert_eq!(run.state(&StageKey::at("Analyze", 3)), StageState::Skipped);
        } else {
            assert_eq!(c.state, StageState::Succeeded);
            assert!(c.record_id.is_some());
        }
    }
}

#[test]
fn fresh_runs_are_pending_and_status_needs_a_known_run() {
    let fx = fixture();
    let run = fx.build();
    assert!(matches!(status(&fx.work, &run.run_id), Err(ControllerError::UnknownRun(_))));
    save_run(&fx.work, &run).unwrap();
    let snap = status(&fx.work, &run.run_id).unwrap();
    assert_eq!(snap.states.len(), 14);
    assert!(snap.states.values().all(|s| *s == StageState::Pending));
    assert_eq!(snap.attempt, 0);
}

fn shared_gate_holds(run: &PipelineRun, snap: &RunSnapshot) -> bool {
    let shared_done = run.split.shared.iter().all(|s| snap.states[&StageKey::shared(s)] == StageState::Succeeded);
    let fanout_started = snap
        .states
        .iter()
        .any(|(k, s)| matches!(k.slot, Slot::Ordinal(_)) && *s != StageState::Pending && *s != StageState::Skipped);
    shared_done || !fanout_started
}

#[test]
fn no_snapshot_shows_fanout_work_before_shared_stages_finish() {
    let fx = fixture();
    let mut run = fx.build();
    let (work, run_id) = (fx.work.clone(), run.run_id.clone());
    let probe = run.clone();
    let done = Arc::new(AtomicBool::new(false));
    let watcher = {
        let done = done.clone();
        std::thread::spawn(move || {
            let mut seen = 0;
            while !done.load(Ordering::SeqCst) {
                if let Ok(snap) = status(&work, &run_id) {
                    assert!(shared_gate_holds(&probe, &snap), "{snap:?}");
                    seen += 1;
                }
            }
            seen
        })
    };
    {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &fx.options()).unwrap()
    };
    done.store(true, Ordering::SeqCst);
    watcher.join().unwrap();

    // Every prefix of the log is a state some reader could have seen.
    let events = read_events(&fx.work, &run.run_id).unwrap();
    assert!(events.len() > 14);
    for n in 0..=events.len() {
        let snap = RunSnapshot::replay(&run.run_id, &run.keys(), &events[..n]).unwrap();
        assert!(shared_gate_holds(&run, &snap), "prefix {n}");
    }
}

#[test]
fn resume_reruns_only_unfinished_stages() {
    let fx = fixture();
    let marker = fx.mark("3-1");
    let mut run = fx.build();
    let first = {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &fx.options()).unwrap()
    };
    assert_eq!(first.record_ids().len(), 5);
    fs::remove_file(marker).unwrap();

    let mut resumed = load_run(&fx.work, &run.run_id).unwrap();
    assert_eq!(resumed.attempt, 1);
    assert_eq!(resumed.record_ids.len(), 5);
    let second = {
        let exec = mock(&resumed);
        execute_run(&mut resumed, &exec, &fx.options()).unwrap()
    };
    assert!(second.succeeded(), "{second:?}");
    assert_eq!(second.attempt, 2);
    assert_eq!(second.record_ids().len(), 6);
    assert_eq!(fx.command_log(&run.run_id, "Build").len(), 1);
    assert_eq!(fx.command_log(&run.run_id, "Execution").len(), 7);
    assert_eq!(fx.archive.list().unwrap().len(), 6);
    // Records from the first attempt are kept, not re-archived.
    for (o, id) in
        &first.combinations.iter().filter_map(|c| c.record_id.clone().map(|r| (c.ordinal, r))).collect::<Vec<_>>()
    {
        assert_eq!(&second.combinations[*o].record_id.clone().unwrap(), id);
    }
}

#[test]
fn retries_resubmit_failed_fanout_jobs() {
    let fx = fixture();
    fx.mark("flaky");
    let mut run = fx.build();
    let mut opts = fx.options();
    opts.retries = 1;
    let report = {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &opts).unwrap()
    };
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(fx.command_log(&run.run_id, "Execution").len(), 12);
    let retries = read_events(&fx.work, &run.run_id)
        .unwrap()
        .iter()
        .filter(|e| e.detail.starts_with("retry 1 after exit code 1"))
        .count();
    assert_eq!(retries, 6);
}

#[test]
fn jobs_past_their_timeout_fail_with_that_cause() {
    let fx = fixture();
    let mut run = fx.build();
    let mut opts = fx.options();
    // A compute job takes two 60 s ticks on this machine.
    opts.job_timeout = Some(Duration::from_secs(90));
    let report = {
        let exec = mock(&run);
        execute_run(&mut run, &exec, &opts).unwrap()
    };
    assert_eq!(report.shared[1].1, StageState::Failed);
    let events = read_events(&fx.work, &run.run_id).unwrap();
    assert!(events.iter().any(|e| e.stage == "Build" && e.new_state == "failed" && e.detail == "timed out"));
    assert!(report.record_ids().is_empty());
}

#[test]
fn stored_config_snapshot_rebuilds_the_same_instances() {
    let fx = fixture();
    let mut run = fx.build();
    let report = {
        let exec = executor_for(&run.machine);
        execute_run(&mut run, exec.as_ref(), &fx.options()).unwrap()
    };
    let id = report.record_ids()[0].to_string();
    let rec = fx.archive.fetch(&id).unwrap();
    let rebuilt = rebuild_from_snapshot(&fx.workspace(), &rec.resolved_config, &rec.metadata.machine).unwrap();
    let rebuilt: Vec<String> = rebuilt.iter().map(|i| i.to_canonical_json()).collect();
    assert_eq!(rebuilt, run.instances_json());
}
