//! Search for the `(leader, V_max set)` with minimal predicted latency and the
//! reconfiguration decision.

mod annealing;
mod exhaustive;
pub mod prng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::LatencyMatrix;
use crate::model::{ModelError, ReplicaId, SystemShape, WeightConfig};

pub use annealing::{simulated_annealing, simulated_annealing_traced, SaParams, SaStep};
pub use exhaustive::exhaustive_search;
pub use prng::SplitMix64;

/// Exhaustive search is used up to this many configurations.
pub const DEFAULT_EXHAUSTIVE_BUDGET: u128 = 50_000;

/// Default improvement factor a candidate must beat.
pub const DEFAULT_ALPHA: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("{count} configurations exceed the exhaustive budget of {budget}; use simulated annealing")]
    BudgetExceeded { count: u128, budget: u128 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid annealing parameters: {0}")]
    InvalidParams(&'static str),
}

/// A configuration with its predicted leader latency (ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigCandidate {
    pub config: WeightConfig,
    pub predicted: f64,
}

/// Best candidate of a search and how many configurations were evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: ConfigCandidate,
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Exhaustive within budget, annealing beyond it.
    #[default]
    Auto,
    Exhaustive,
    Annealing,
}

/// Inputs shared by both search strategies.
#[derive(Debug, Clone)]
pub struct SearchRequest<'a> {
    pub shape: &'a SystemShape,
    pub m_p: &'a LatencyMatrix,
    pub m_w: &'a LatencyMatrix,
    pub current: &'a WeightConfig,
    pub leader_candidates: &'a [ReplicaId],
    pub rounds: usize,
    pub seed: u64,
    pub sa: SaParams,
    pub budget: u128,
}

pub fn search(req: &SearchRequest<'_>, strategy: Strategy) -> Result<SearchOutcome, OptimizerError> {
    let use_exhaustive = match strategy {
        Strategy::Exhaustive => true,
        Strategy::Annealing => false,
        Strategy::Auto => req.shape.count_configurations() <= req.budget,
    };
    if use_exhaustive {
        exhaustive_search(
            req.shape,
            req.m_p,
            req.m_w,
            req.leader_candidates,
            Some(req.current.leader()),
            req.rounds,
            req.budget,
        )
    } else {
        simulated_annealing(req.shape, req.m_p, req.m_w, req.current, req.seed, &req.sa, req.rounds)
    }
}

/// Whether to move from the current configuration to the best one found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigDecision {
    pub reconfigure: bool,
    pub new_config: Option<WeightConfig>,
    pub leader_change: bool,
    /// `current.predicted / best.predicted`; `+∞` when only the best is instantaneous.
    pub ratio: f64,
}

/// Reconfigures iff `current.predicted / best.predicted ≥ alpha` and the
/// configurations differ.
pub fn decide(current: &ConfigCandidate, best: &ConfigCandidate, alpha: f64) -> ReconfigDecision {
    let ratio = if best.predicted == 0.0 {
        if current.predicted > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    } else {
        current.predicted / best.predicted
    };
    let reconfigure = best.config != current.config && ratio >= alpha && best.predicted.is_finite();
    ReconfigDecision {
        reconfigure,
        new_config: reconfigure.then(|| best.config.clone()),
        leader_change: reconfigure && best.config.leader() != current.config.leader(),
        ratio,
    }
}
