//! Deterministic discrete-event runs: configuration, engine and metrics.

pub mod config;
pub mod engine;
pub mod metrics;

pub use config::{ConfigError, Experiment, RunConfig, ScenarioConfig};
pub use engine::{setup, simulate, RunReport, SimError, SimRuntime, Simulation};
pub use metrics::{loss_ratio, pearson, ActorRef, Counters, EventRecord, LossRow, PerfRow};
