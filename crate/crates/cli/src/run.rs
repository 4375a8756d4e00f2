use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Duration;

use clap::Args;

use benchforge::controller::{
    build_run, default_requester, execute_run, list_runs, load_run, parse_override, save_run, ExecuteOptions,
    PipelineRun, RunReport, RunRequest, Slot, StageState, Workspace,
};
use benchforge::executor::{executor_for, BackendKind};
use benchforge::provenance::Archive;

use crate::{Backend, CmdResult, Ctx, Failure};

#[derive(Args)]
pub struct RunArgs {
    /// Config document, by name or path.
    #[arg(long)]
    config: String,
    /// Target machine; repeat for several.
    #[arg(long = "machine", short = 'm', required = true)]
    machines: Vec<String>,
    /// Override a config value for this run only.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the backend named in the machine file.
    #[arg(long, value_enum)]
    executor: Option<Backend>,
    /// Extra attempts for a failed per-combination job.
    #[arg(long, default_value_t = 0)]
    retries: u32,
    /// Per-job limit in seconds of backend time, queueing included.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    requester: Option<String>,
}

#[derive(Args)]
pub struct PlanArgs {
    #[arg(long)]
    config: String,
    #[arg(long = "machine", short = 'm', required = true)]
    machines: Vec<String>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also print every rendered command.
    #[arg(long)]
    commands: bool,
}

fn workspace(ctx: &Ctx) -> Result<Workspace, Failure> {
    if !ctx.config_root.is_dir() {
        return Err(Failure::user(format!("config root {} is not a directory", ctx.config_root.display())));
    }
    Ok(Workspace::open(&ctx.config_root)?)
}

fn assignments(run: &PipelineRun, ordinal: usize) -> String {
    let combo = &run.instances[ordinal].combination;
    let parts: Vec<String> = combo.assignments.iter().map(|(k, v)| format!("{k}={}", v.render())).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(",")
    }
}

fn print_report(ctx: &Ctx, run: &PipelineRun, report: &RunReport) {
    let id = &report.run_id;
    for (stage, state) in &report.shared {
        if ctx.porcelain {
            out!("shared\t{id}\t{stage}\t{state}");
        } else {
            let why = match &report.shared_failure {
                Some((failed, d)) if failed == stage && !d.is_empty() => format!("  ({d})"),
                _ => String::new(),
            };
            out!("  {stage:<12} shared      {state}{why}");
        }
    }
    for c in &report.combinations {
        let record = c.record_id.as_deref().unwrap_or("-");
        let coords = assignments(run, c.ordinal);
        if ctx.porcelain {
            out!("combination\t{id}\t{}\t{}\t{record}\t{coords}", c.ordinal, c.state);
        } else {
            let why = match (&c.failed_stage, &c.detail) {
                (Some(stage), Some(d)) => format!("  ({stage}: {d})"),
                (Some(stage), None) => format!("  ({stage})"),
                _ => String::new(),
            };
            out!("  [{}] {coords:<24} {:<10} {record}{why}", c.ordinal, c.state.to_string());
        }
    }
    let count = |s: StageState| report.combinations.iter().filter(|c| c.state == s).count();
    let (ok, failed, skipped) = (count(StageState::Succeeded), count(StageState::Failed), count(StageState::Skipped));
    if ctx.porcelain {
        out!("summary\t{id}\t{ok}\t{failed}\t{skipped}");
    } else {
        out!("run {id}: {ok} succeeded, {failed} failed, {skipped} skipped");
    }
}

fn request(config: &str, machines: &[String], overrides: &[String]) -> Result<RunRequest, Failure> {
    let machines: Vec<&str> = machines.iter().map(String::as_str).collect();
    let mut req = RunRequest::new(config, &machines);
    for text in overrides {
        let (k, v) = parse_override(text)?;
        req = req.with_override(&k, &v);
    }
    Ok(req)
}

/// What `run` would execute, without executing or registering anything.
pub fn cmd_plan(ctx: &Ctx, args: &PlanArgs) -> CmdResult {
    let ws = workspace(ctx)?;
    let req = request(&args.config, &args.machines, &args.overrides)?;
    for run in build_run(&req, &ws)? {
        let m = &run.machine.name;
        let shared = run.split.shared.join(",");
        let fanout = run.split.fanout.join(",");
        if ctx.porcelain {
            out!("split\t{m}\tshared\t{shared}");
            out!("split\t{m}\tfanout\t{fanout}");
        } else {
            out!("{m}: shared [{shared}], per combination [{fanout}], {} combinations", run.instances.len());
        }
        for (ordinal, inst) in run.instances.iter().enumerate() {
            let coords = assignments(&run, ordinal);
            if ctx.porcelain {
                out!("combination\t{m}\t{ordinal}\t{coords}");
            } else {
                out!("  [{ordinal}] {coords}");
            }
            if !args.commands {
                continue;
            }
            for sc in &inst.stages {
                for cmd in &sc.commands {
                    if ctx.porcelain {
                        out!("command\t{m}\t{ordinal}\t{}\t{cmd}", sc.stage);
                    } else {
                        out!("      {:<12} {cmd}", sc.stage);
                    }
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_run(ctx: &Ctx, args: &RunArgs) -> CmdResult {
    let ws = workspace(ctx)?;
    let mut req = request(&args.config, &args.machines, &args.overrides)?;
    req.requester = args.requester.clone().unwrap_or_else(default_requester);
    if let Some(t) = args.timeout {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::user("--timeout must be a positive number of seconds"));
        }
    }

    let mut runs = build_run(&req, &ws)?;
    for run in &mut runs {
        if let Some(b) = args.executor {
            run.machine.backend = match b {
                Backend::Local => BackendKind::Local,
                Backend::Mock => BackendKind::Mock,
            };
        }
        // Registered up front so that `status` sees every run as pending.
        save_run(&ctx.workdir, run)?;
    }

    let archive = Archive::open(&ctx.archive)?;
    let mut opts = ExecuteOptions::new(&ctx.workdir, archive);
    opts.retries = args.retries;
    opts.job_timeout = args.timeout.map(Duration::from_secs_f64);
    let exe = std::env::current_exe().map_err(Failure::exec)?;
    opts.env = BTreeMap::from([("BENCHFORGE_BIN".to_string(), exe.display().to_string())]);

    let mut all_ok = true;
    for run in &mut runs {
        if ctx.porcelain {
            out!("run\t{}\t{}\t{}", run.run_id, run.machine.name, run.instances.len());
        } else {
            out!("run {} on {} ({} combinations)", run.run_id, run.machine.name, run.instances.len());
        }
        let exec = executor_for(&run.machine);
        let report = execute_run(run, exec.as_ref(), &opts);
        exec.shutdown();
        let report = report?;
        print_report(ctx, run, &report);
        all_ok &= report.succeeded();
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

pub fn cmd_status(ctx: &Ctx, run_id: &str) -> CmdResult {
    let run = load_run(&ctx.workdir, run_id)?;
    if ctx.porcelain {
        out!("run\t{}\t{}\t{}", run.run_id, run.machine.name, run.attempt);
    } else {
        out!("run {} on {}, attempt {}", run.run_id, run.machine.name, run.attempt);
    }
    for key in run.keys() {
        let state = run.state(&key);
        let slot = match key.slot {
            Slot::Shared => "shared".to_string(),
            Slot::Ordinal(o) => o.to_string(),
        };
        let record = match key.slot {
            Slot::Ordinal(o) if key.stage == benchforge::controller::EXECUTION_STAGE => run.record_ids.get(&o).cloned(),
            _ => None,
        };
        if ctx.porcelain {
            out!("stage\t{}\t{slot}\t{state}\t{}", key.stage, record.as_deref().unwrap_or("-"));
        } else {
            out!(
                "  {:<12} {slot:<7} {state}{}",
                key.stage,
                record.map(|r| format!("  record {r}")).unwrap_or_default()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_list(ctx: &Ctx) -> CmdResult {
    for id in list_runs(&ctx.workdir)? {
        let run = load_run(&ctx.workdir, &id)?;
        let n = |want: StageState| run.stage_states.values().filter(|s| **s == want).count();
        let [p, r, s, f, k] =
            [StageState::Pending, StageState::Running, StageState::Succeeded, StageState::Failed, StageState::Skipped]
                .map(n);
        if ctx.porcelain {
            out!("run\t{id}\t{}\t{}\t{p}\t{r}\t{s}\t{f}\t{k}", run.machine.name, run.attempt);
        } else {
            out!(
                "{id}  {:<12} {} combinations  pending {p}, running {r}, succeeded {s}, failed {f}, skipped {k}",
                run.machine.name,
                run.instances.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
