//! Continuous benchmarking at desk scale.
//!
//! `benchforge` turns a hierarchical benchmark configuration into one fully
//! specialized pipeline per parameter combination, runs the pipelines on a
//! pluggable executor, archives every result with provenance metadata, and
//! aggregates the archived phase timers into scaling analyses.
//!
//! The modules follow the life of a benchmark:
//!
//! - [`config`]: documents, inheritance, parameter space.
//! - [`templates`]: workflow, platform, machine and implementation layers.
//! - [`executor`]: local shell and simulated batch-scheduler backends.
//! - [`controller`]: run construction, stage split, fan-out and event log.
//! - [`provenance`]: metadata capture and the record archive.
//! - [`analysis`]: timer parsing, real-time factors, seed statistics, plots.
//! - [`workload`]: the built-in spike-exchange demo benchmark.

pub mod analysis;
pub mod config;
pub mod controller;
pub mod executor;
pub mod provenance;
pub mod templates;
pub mod workload;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

/// The guide's snippets, run as doc-tests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/executors.md")]
    mod executors {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
    #[doc = include_str!("../../../book/src/archive.md")]
    mod archive {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
}
