//! Deterministic discrete-event WAN simulator.
//!
//! A [`Scenario`] describes the system shape, the latency matrix, clients and
//! a fault script. [`run`] executes it against real [`crate::protocol::Replica`]
//! state machines, exchanging encoded messages over simulated links, and
//! returns a [`MetricsLog`]. Two runs with the same seed produce identical logs.

mod kernel;
mod link;
mod metrics;
mod oracle;
mod runner;
pub mod scenario;

pub use kernel::{Scheduler, SimTime};
pub use link::{DelayOverride, Jitter, LinkModel};
pub use metrics::{
    pearson, trimmed_mean, CalcEntry, ClientRecord, ConfigPeriod, EventRecord, InstanceRecord, MetricsLog,
};
pub use oracle::{oracle_decision_times, oracle_mean_leader_latency};
pub use runner::{run, run_many, RunError, Simulation, MAX_SIM_MS, THINK_TIME_MS, TICK_MS};
pub use scenario::{five_sites, Fault, Fixture, Resolved, Scenario, ScenarioError};
