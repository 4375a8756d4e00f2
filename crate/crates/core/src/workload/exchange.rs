use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::WorkloadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Spike {
    /// Global id of the emitting neuron.
    pub source: u32,
    /// Simulation step within the current cycle.
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub ranks: usize,
    pub initial_capacity: usize,
    pub growth_factor: f64,
    pub shrink_threshold: f64,
    pub min_capacity: usize,
    /// Exchange cycles. Zero is accepted and yields an empty run.
    pub steps: u64,
    pub seed: u64,
    /// Mean spikes per rank per cycle.
    pub spike_rate: f64,
    /// Cycles remembered when deciding whether to shrink.
    pub window: usize,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            ranks: 4,
            initial_capacity: 32,
            growth_factor: 1.5,
            shrink_threshold: 0.25,
            min_capacity: 4,
            steps: 100,
            seed: 1,
            spike_rate: 20.0,
            window: 10,
        }
    }
}

impl ExchangeConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.ranks == 0 {
            return bad("ranks must be positive");
        }
        if self.initial_capacity == 0 || self.min_capacity == 0 {
            return bad("initial_capacity and min_capacity must be positive");
        }
        if self.min_capacity > self.initial_capacity {
            return bad("min_capacity must not exceed initial_capacity");
        }
        if !(self.growth_factor > 1.0 && self.growth_factor.is_finite()) {
            return bad("growth_factor must be greater than 1");
        }
        if !(self.shrink_threshold > 0.0 && self.shrink_threshold < 1.0) {
            return bad("shrink_threshold must lie strictly between 0 and 1");
        }
        if !(self.spike_rate >= 0.0 && self.spike_rate.is_finite()) {
            return bad("spike_rate must be non-negative");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeState {
    pub section_capacity: usize,
    pub grow_count: u64,
    pub shrink_count: u64,
    pub two_round_count: u64,
    /// Largest per-rank send count of each recent cycle, oldest first.
    pub usage_window: VecDeque<usize>,
}

impl ExchangeState {
    pub fn new(cfg: &ExchangeConfig) -> Self {
        ExchangeState {
            section_capacity: cfg.initial_capacity,
            grow_count: 0,
            shrink_count: 0,
            two_round_count: 0,
            usage_window: VecDeque::with_capacity(cfg.window),
        }
    }

    pub fn recent_max_usage(&self) -> usize {
        self.usage_window.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    /// What each rank received, in buffer order.
    pub delivered: Vec<Vec<Spike>>,
    pub state: ExchangeState,
    pub rounds_used: u8,
    pub grew: bool,
    pub shrank: bool,
    /// Buffer slots moved by all rounds, headers included.
    pub slots_moved: u64,
}

fn ceil_mul(g: f64, n: usize) -> usize {
    (g * n as f64).ceil() as usize
}

/// One modeled all-gather. Each rank owns a section holding a count header
/// and `capacity` spike slots.
struct Gather {
    capacity: usize,
    headers: Vec<usize>,
    slots: Vec<Option<Spike>>,
}

impl Gather {
    fn pack(per_rank: &[Vec<Spike>], capacity: usize) -> Gather {
        let mut slots = vec![None; per_rank.len() * capacity];
        for (r, spikes) in per_rank.iter().enumerate() {
            for (i, s) in spikes.iter().take(capacity).enumerate() {
                slots[r * capacity + i] = Some(*s);
            }
        }
        Gather { capacity, headers: per_rank.iter().map(Vec::len).collect(), slots }
    }

    fn overflowed(&self) -> bool {
        self.headers.iter().any(|&n| n > self.capacity)
    }

    fn size(&self) -> u64 {
        (self.headers.len() + self.slots.len()) as u64
    }

    /// What any one rank reads out of the gathered buffer.
    fn unpack(&self) -> Vec<Spike> {
        let mut out = Vec::with_capacity(self.headers.iter().sum());
        for (r, &n) in self.headers.iter().enumerate() {
            let section = &self.slots[r * self.capacity..(r + 1) * self.capacity];
            out.extend(section[..n].iter().map(|s| s.expect("header counts a filled slot")));
        }
        out
    }
}

pub fn exchange_cycle(per_rank: &[Vec<Spike>], st: &ExchangeState, cfg: &ExchangeConfig) -> Result<CycleOutcome, WorkloadError> {
    if per_rank.len() != cfg.ranks {
        return Err(WorkloadError::Invalid(format!("expected {} rank send lists, got {}", cfg.ranks, per_rank.len())));
    }
    let mut state = st.clone();
    let max_sent = per_rank.iter().map(Vec::len).max().unwrap_or(0);

    let first = Gather::pack(per_rank, state.section_capacity);
    let mut slots_moved = first.size() * cfg.ranks as u64;
    let mut rounds_used = 1;
    let mut grew = false;
    let gathered = if first.overflowed() {
        // Every rank sees the same headers, so all agree on the new size.
        state.section_capacity = ceil_mul(cfg.growth_factor, max_sent).max(cfg.min_capacity);
        state.grow_count += 1;
        state.two_round_count += 1;
        grew = true;
        rounds_used = 2;
        let second = Gather::pack(per_rank, state.section_capacity);
        assert!(!second.overflowed(), "second round overflowed after resize");
        slots_moved += second.size() * cfg.ranks as u64;
        second
    } else {
        first
    };
    let received = gathered.unpack();
    let delivered = vec![received; cfg.ranks];

    if state.usage_window.len() == cfg.window {
        state.usage_window.pop_front();
    }
    state.usage_window.push_back(max_sent);
    let recent = state.recent_max_usage();
    let mut shrank = false;
    if (recent as f64) < cfg.shrink_threshold * state.section_capacity as f64 {
        let target = ceil_mul(cfg.growth_factor, recent).max(cfg.min_capacity);
        if target < state.section_capacity {
            state.section_capacity = target;
            state.shrink_count += 1;
            shrank = true;
        }
    }
    Ok(CycleOutcome { delivered, state, rounds_used, grew, shrank, slots_moved })
}
