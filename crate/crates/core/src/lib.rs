//! Deterministic discrete-event MANET simulator: AODV routing, cooperative
//! black-hole adversaries and DRI-table cross-checking.

pub mod adversary;
pub mod aodv;
pub mod defense;
pub mod fixtures;
pub mod messages;
pub mod metrics;
pub mod mobility;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod time;

pub use metrics::{aggregate, MetricsReport, Summary};
pub use scenario::{Mode, Scenario};
pub use sim::{run_scenario, SimError, SimOptions, Simulation};
