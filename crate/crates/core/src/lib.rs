//! Weighted Byzantine consensus with latency-driven self-optimization.
//!
//! * [`model`]: binary weight sizing, quorum predicates, configuration space.
//! * [`monitoring`]: challenge-tagged latency probes, synchronized matrices, sanitization.
//! * [`predictor`]: deterministic consensus-latency prediction.
//! * [`optimizer`]: exhaustive and annealing search, reconfiguration decision.
//! * [`protocol`]: the PROPOSE/WRITE/ACCEPT replica state machine.
//! * [`simnet`]: deterministic discrete-event WAN simulator, fault injection and scenarios.

pub mod matrix;
pub mod model;
pub mod monitoring;
pub mod optimizer;
pub mod predictor;
pub mod protocol;
pub mod simnet;

/// Consensus instance id. Instance ids start at 1; 0 means "nothing decided".
pub type Cid = u64;

pub use matrix::LatencyMatrix;
pub use model::{ReplicaId, SystemShape, Weight, WeightConfig};
