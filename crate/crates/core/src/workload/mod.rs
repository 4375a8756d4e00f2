//! Built-in demo benchmark: ranks simulated in one process exchange spikes
//! through a dynamically sized all-gather buffer, and received spikes drive
//! pair-based STDP evaluated through exponential lookup tables.
//!
//! The demo writes the same `timers` file any real workload would, plus an
//! `exchange_stats` file with the buffer resize counters.

use std::path::PathBuf;

use thiserror::Error;

mod demo;
mod exchange;
mod exptable;
mod stdp;

pub use demo::{run_demo, simulate, DemoFiles, DemoReport, ExchangeStats, NetworkShape, STATS_FILE};
pub use exchange::{exchange_cycle, CycleOutcome, ExchangeConfig, ExchangeState, Spike};
pub use exptable::{build_table, default_length, exp_direct, exp_lookup, Branch, ExpTable};
pub use stdp::{stdp_update, StdpParams};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload parameter: {0}")]
    Invalid(String),
    #[error("weight {w} outside [0, {w_max}]")]
    WeightOutOfRange { w: f64, w_max: f64 },
    #[error("heterogeneous tau_minus values {0:?}; lookup tables need one shared value")]
    HeterogeneousTauMinus(Vec<f64>),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Collapses per-synapse depression time constants into the single shared
/// value the lookup table needs. Differing values are rejected, not averaged.
pub fn shared_tau_minus(values: &[f64]) -> Result<f64, WorkloadError> {
    match values.split_first() {
        None => Err(WorkloadError::Invalid("no tau_minus given".into())),
        Some((first, rest)) if rest.iter().all(|v| v == first) => Ok(*first),
        Some(_) => Err(WorkloadError::HeterogeneousTauMinus(values.to_vec())),
    }
}
