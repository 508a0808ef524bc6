//! Tick-synchronized co-simulation of transmission, distribution, DERs and DERMS.
//!
//! Each tick the orchestrator publishes `sync/tick`; every component runs once it
//! has seen the tick and `sync/done` from its upstream components, then publishes
//! its outputs and its own `sync/done`. Setpoints issued at tick t take effect at t+1,
//! and transmission consumes the feeder head power of tick t-1.

pub mod assemble;
pub mod barrier;
pub mod components;
pub mod config;
pub mod metrics;
pub mod recorder;
pub mod runner;

pub use assemble::{assemble, Assembly};
pub use barrier::TickBarrier;
pub use components::{Clock, Component, TickStatus};
pub use config::{apply_override, CaseLabel, ConfigError, Diagnostic, Scenario, ScenarioFile};
pub use metrics::{compare_runs, compute_metrics, Comparison, RunManifest, RunMetrics};
pub use runner::{builtin_components, run_scenario, run_with_components, Mode, RunOptions, RunReport};

use crate::der::DerError;
use crate::derms::DermsError;
use crate::dnet::FeederError;
use crate::msgbus::BusError;
use crate::tsnet::TsError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Transmission(#[from] TsError),
    #[error(transparent)]
    Der(#[from] DerError),
    #[error(transparent)]
    Derms(#[from] DermsError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("deadlock at tick {tick}: no sync/done from {}", .missing.join(", "))]
    Deadlock { tick: u64, missing: Vec<String> },
    #[error("no components registered")]
    NoComponents,
    #[error("component id `{0}` registered twice")]
    DuplicateComponent(String),
    #[error("output: {0}")]
    Output(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulation time of a tick, rounded to the nanosecond so recorded times print cleanly.
pub fn tick_time(tick: u64, step_s: f64) -> f64 {
    (tick as f64 * step_s * 1e9).round() / 1e9
}
