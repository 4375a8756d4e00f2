use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::exchange::{exchange_cycle, ExchangeConfig, ExchangeState, Spike};
use super::exptable::{build_table, default_length, ExpTable};
use super::stdp::{stdp_update, StdpParams};
use super::WorkloadError;
use crate::analysis::{PhaseTimers, TIMERS_FILE};

pub const STATS_FILE: &str = "exchange_stats";

/// Size of the simulated network and its time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub neurons_per_rank: u32,
    /// Incoming synapses per neuron.
    pub indegree: u32,
    /// Resolution in milliseconds.
    pub h: f64,
    /// Simulation steps between two exchanges.
    pub cycle_steps: u32,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape { neurons_per_rank: 100, indegree: 20, h: 0.1, cycle_steps: 10 }
    }
}

impl NetworkShape {
    fn validate(&self) -> Result<(), WorkloadError> {
        if self.neurons_per_rank == 0 || self.indegree == 0 || self.cycle_steps == 0 {
            return Err(WorkloadError::Invalid("neurons_per_rank, indegree and cycle_steps must be positive".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(WorkloadError::Invalid("h must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub grow_count: u64,
    pub shrink_count: u64,
    pub two_round_count: u64,
    pub final_capacity: usize,
}

impl ExchangeStats {
    pub fn to_file(&self) -> String {
        format!(
            "grow_count {}\nshrink_count {}\ntwo_round_count {}\nfinal_capacity {}\n",
            self.grow_count, self.shrink_count, self.two_round_count, self.final_capacity
        )
    }

    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut values: BTreeMap<&str, u64> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let bad = || WorkloadError::Invalid(format!("exchange stats line `{line}`"));
            let (key, value) = line.trim().split_once(' ').ok_or_else(bad)?;
            values.insert(key, value.trim().parse().map_err(|_| bad())?);
        }
        let get = |k: &str| values.get(k).copied().ok_or_else(|| WorkloadError::Invalid(format!("exchange stats lack `{k}`")));
        Ok(ExchangeStats {
            grow_count: get("grow_count")?,
            shrink_count: get("shrink_count")?,
            two_round_count: get("two_round_count")?,
            final_capacity: get("final_capacity")? as usize,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub timers: PhaseTimers,
    pub stats: ExchangeStats,
    /// Final weights, rank by rank in synapse order.
    pub weights: Vec<Vec<f64>>,
    /// sha256 over every cycle's sent and delivered spikes.
    pub spike_digest: String,
    pub spikes_sent: u64,
    pub rounds: u64,
}

struct Synapse {
    target: u32,
    weight: f64,
    last_pre: Option<i64>,
}

struct Rank {
    state: Vec<f64>,
    last_post: Vec<Option<i64>>,
    synapses: Vec<Synapse>,
    by_source: HashMap<u32, Vec<usize>>,
}

fn build_rank(rng: &mut ChaCha8Rng, total_neurons: u32, shape: &NetworkShape, w0: f64) -> Rank {
    let n = shape.neurons_per_rank as usize;
    let mut synapses = Vec::with_capacity(n * shape.indegree as usize);
    let mut by_source: HashMap<u32, Vec<usize>> = HashMap::new();
    for target in 0..shape.neurons_per_rank {
        for _ in 0..shape.indegree {
            let source = rng.random_range(0..total_neurons);
            by_source.entry(source).or_default().push(synapses.len());
            synapses.push(Synapse { target, weight: w0, last_pre: None });
        }
    }
    Rank { state: vec![0.0; n], last_post: vec![None; n], synapses, by_source }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs the demo in memory. Spike content depends only on the seed.
pub fn simulate(cfg: &ExchangeConfig, stdp: &StdpParams, shape: &NetworkShape, use_table: bool) -> Result<DemoReport, WorkloadError> {
    cfg.validate()?;
    stdp.validate()?;
    shape.validate()?;

    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table: Option<ExpTable> = if use_table {
        Some(build_table(stdp.tau_plus, stdp.tau_minus, shape.h, default_length(stdp.tau_plus, stdp.tau_minus, shape.h))?)
    } else {
        None
    };
    let total_neurons = shape.neurons_per_rank * cfg.ranks as u32;
    let w0 = 0.5 * stdp.w_max;
    let mut ranks: Vec<Rank> = (0..cfg.ranks).map(|_| build_rank(&mut rng, total_neurons, shape, w0)).collect();
    let poisson = if cfg.spike_rate > 0.0 {
        Some(Poisson::new(cfg.spike_rate).map_err(|e| WorkloadError::Invalid(e.to_string()))?)
    } else {
        None
    };
    // A clock read can come back as zero on coarse timers; construction always did some work.
    let construction = secs(t0).max(1e-9);

    let mut timers = PhaseTimers { construction, update: 0.0, collocate: 0.0, communicate: 0.0, deliver: 0.0, model_time: 0.0 };
    let mut state = ExchangeState::new(cfg);
    let mut digest = Sha256::new();
    let mut spikes_sent = 0u64;
    let mut rounds = 0u64;
    let cycle_steps = shape.cycle_steps as i64;

    for cycle in 0..cfg.steps {
        let base = cycle as i64 * cycle_steps;

        // Spike content is drawn outside the timed segments.
        let emitted: Vec<Vec<(u32, u32)>> = (0..cfg.ranks)
            .map(|_| {
                let n = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
                let mut v: Vec<(u32, u32)> = (0..n)
                    .map(|_| (rng.random_range(0..shape.neurons_per_rank), rng.random_range(0..shape.cycle_steps)))
                    .collect();
                v.sort_by_key(|&(local, step)| (step, local));
                v
            })
            .collect();

        let t = Instant::now();
        for (rank, fired) in ranks.iter_mut().zip(&emitted) {
            for v in rank.state.iter_mut() {
                *v *= 0.95;
            }
            for &(local, step) in fired {
                rank.state[local as usize] = 0.0;
                rank.last_post[local as usize] = Some(base + step as i64);
            }
        }
        timers.update += secs(t);

        let t = Instant::now();
        let send: Vec<Vec<Spike>> = emitted
            .iter()
            .enumerate()
            .map(|(r, fired)| {
                fired
                    .iter()
                    .map(|&(local, step)| Spike { source: r as u32 * shape.neurons_per_rank + local, step })
                    .collect()
            })
            .collect();
        timers.collocate += secs(t);

        let t = Instant::now();
        let out = exchange_cycle(&send, &state, cfg)?;
        timers.communicate += secs(t);
        state = out.state;
        rounds += out.rounds_used as u64;

        let t = Instant::now();
        for (rank, received) in ranks.iter_mut().zip(&out.delivered) {
            for spike in received {
                let Some(idx) = rank.by_source.get(&spike.source) else { continue };
                let t_pre = base + spike.step as i64;
                for &i in idx {
                    let syn = &mut rank.synapses[i];
                    if let Some(t_post) = rank.last_post[syn.target as usize] {
                        syn.weight = stdp_update(syn.weight, t_post - t_pre, stdp, shape.h, table.as_ref())?;
                    }
                    syn.last_pre = Some(t_pre);
                    rank.state[syn.target as usize] += syn.weight;
                }
            }
        }
        timers.deliver += secs(t);

        for (r, s) in send.iter().enumerate() {
            spikes_sent += s.len() as u64;
            digest.update(format!("c{cycle} r{r} sent").as_bytes());
            for x in s {
                digest.update(x.source.to_le_bytes());
                digest.update(x.step.to_le_bytes());
            }
        }
        for (r, d) in out.delivered.iter().enumerate() {
            let mut sorted = d.clone();
            sorted.sort();
            digest.update(format!("c{cycle} r{r} got").as_bytes());
            for x in sorted {
                digest.update(x.source.to_le_bytes());
                digest.update(x.step.to_le_bytes());
            }
        }
    }

    // An empty run still reports one cycle of model time so the real-time factor stays defined.
    let cycles = cfg.steps.max(1) as f64;
    timers.model_time = cycles * shape.cycle_steps as f64 * shape.h / 1000.0;
    if cfg.steps == 0 {
        timers.update = 0.0;
        timers.collocate = 0.0;
        timers.communicate = 0.0;
        timers.deliver = 0.0;
    }
    let stats = ExchangeStats {
        grow_count: state.grow_count,
        shrink_count: state.shrink_count,
        two_round_count: state.two_round_count,
        final_capacity: state.section_capacity,
    };
    let weights = ranks.iter().map(|r| r.synapses.iter().map(|s| s.weight).collect()).collect();
    Ok(DemoReport { timers, stats, weights, spike_digest: hex::encode(digest.finalize()), spikes_sent, rounds })
}

#[derive(Debug, Clone)]
pub struct DemoFiles {
    pub timers: PathBuf,
    pub stats: PathBuf,
}

/// Runs the demo and writes the timer and exchange statistics files.
pub fn run_demo(
    cfg: &ExchangeConfig,
    stdp: &StdpParams,
    shape: &NetworkShape,
    use_table: bool,
    out_dir: &Path,
) -> Result<(DemoReport, DemoFiles), WorkloadError> {
    let report = simulate(cfg, stdp, shape, use_table)?;
    let io = |path: &Path, e: std::io::Error| WorkloadError::Io { path: path.to_path_buf(), message: e.to_string() };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let files = DemoFiles { timers: out_dir.join(TIMERS_FILE), stats: out_dir.join(STATS_FILE) };
    fs::write(&files.timers, report.timers.to_file()).map_err(|e| io(&files.timers, e))?;
    fs::write(&files.stats, report.stats.to_file()).map_err(|e| io(&files.stats, e))?;
    Ok((report, files))
}
