use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;

use benchforge::workload::{run_demo, ExchangeConfig, NetworkShape, StdpParams};

use crate::{CmdResult, Ctx, Failure};

#[derive(Args)]
pub struct WorkloadArgs {
    /// Directory for the `timers` and `exchange_stats` files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    /// Ranks per node; the simulation runs nodes × tasks-per-node ranks.
    #[arg(long, default_value_t = 1)]
    tasks_per_node: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Exchange cycles.
    #[arg(long, default_value_t = 100)]
    steps: u64,
    #[arg(long, default_value_t = 100)]
    neurons_per_rank: u32,
    #[arg(long, default_value_t = 20)]
    indegree: u32,
    /// Integration step in ms.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Simulation steps per exchange cycle.
    #[arg(long, default_value_t = 10)]
    cycle_steps: u32,
    /// Mean spikes per rank per cycle.
    #[arg(long, default_value_t = 20.0)]
    spike_rate: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    use_table: bool,
    #[arg(long, default_value_t = 32)]
    initial_capacity: usize,
    #[arg(long, default_value_t = 1.5)]
    growth_factor: f64,
    #[arg(long, default_value_t = 0.25)]
    shrink_threshold: f64,
    #[arg(long, default_value_t = 4)]
    min_capacity: usize,
    /// Cycles of usage history consulted before shrinking.
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    w_max: f64,
    #[arg(long, default_value_t = 20.0)]
    tau_plus: f64,
    #[arg(long, default_value_t = 20.0)]
    tau_minus: f64,
}

pub fn cmd_workload(ctx: &Ctx, a: &WorkloadArgs) -> CmdResult {
    let ranks = a.nodes.checked_mul(a.tasks_per_node).ok_or_else(|| Failure::user("too many ranks"))?;
    let cfg = ExchangeConfig {
        ranks,
        initial_capacity: a.initial_capacity,
        growth_factor: a.growth_factor,
        shrink_threshold: a.shrink_threshold,
        min_capacity: a.min_capacity,
        steps: a.steps,
        seed: a.seed,
        spike_rate: a.spike_rate,
        window: a.window,
    };
    let stdp =
        StdpParams { lambda: a.lambda, alpha: a.alpha, w_max: a.w_max, tau_plus: a.tau_plus, tau_minus: a.tau_minus };
    let shape =
        NetworkShape { neurons_per_rank: a.neurons_per_rank, indegree: a.indegree, h: a.h, cycle_steps: a.cycle_steps };
    let (report, files) = run_demo(&cfg, &stdp, &shape, a.use_table, &a.out).map_err(|e| match e {
        benchforge::workload::WorkloadError::Io { .. } => Failure::exec(e),
        other => Failure::user(other),
    })?;
    let s = &report.stats;
    if ctx.porcelain {
        out!("timers\t{}", files.timers.display());
        out!("stats\t{}", files.stats.display());
        out!("exchange\t{}\t{}\t{}\t{}", s.grow_count, s.shrink_count, s.two_round_count, s.final_capacity);
        out!("digest\t{}", report.spike_digest);
    } else {
        out!(
            "{ranks} ranks, {} cycles, {} spikes sent, {} exchange rounds",
            a.steps,
            report.spikes_sent,
            report.rounds
        );
        out!(
            "buffer: grew {}×, shrank {}×, {} two-round cycles, final section capacity {}",
            s.grow_count,
            s.shrink_count,
            s.two_round_count,
            s.final_capacity
        );
        out!("timers    {}", files.timers.display());
        out!("stats     {}", files.stats.display());
    }
    Ok(ExitCode::SUCCESS)
}
