//! Simulator, scenario tooling and file formats for LocalCoin.
//!
//! The protocol itself lives in `localcoin-core`; this crate moves nodes
//! around, delivers their broadcasts, records what happens and measures it.

pub mod adversary;
pub mod audit;
pub mod config;
pub mod log;
pub mod metrics;
pub mod mobility;
pub mod scenarios;
pub mod sim;
pub mod sweep;
pub mod trace;

pub use config::{ConfigError, ScenarioConfig};
pub use log::EventLog;
pub use metrics::{compute_report, spread_over_time, MetricsReport};
pub use sim::{run, RunOutput, SimError, World};
