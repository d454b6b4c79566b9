//! The weighted PROPOSE/WRITE/ACCEPT state machine.
//!
//! A [`Replica`] is driven by its host (the simulator) through
//! [`Replica::on_message`], [`Replica::on_tick`], [`Replica::install_view`]
//! and [`Replica::catch_up`], and reacts by returning [`Action`]s. It never
//! reads a clock on its own, so identical inputs give identical outputs.
//!
//! One instance is in flight at a time: the leader proposes `cid + 1` as soon
//! as it decides `cid`. Messages for later instances are held back until the
//! replica reaches them. Every `calc_interval` decisions all replicas run the
//! optimizer over the same decided measurements and switch to the same new
//! configuration from the next instance on.

mod message;
mod replica;

use serde::{Deserialize, Serialize};

use crate::model::{ReplicaId, SystemShape, WeightConfig};
use crate::monitoring::{DEFAULT_SYNC_PERIOD, DEFAULT_WINDOW};
use crate::optimizer::{ConfigCandidate, ReconfigDecision, SaParams, Strategy, DEFAULT_ALPHA, DEFAULT_EXHAUSTIVE_BUDGET};
use crate::predictor::DEFAULT_ROUNDS;
use crate::{Cid, LatencyMatrix};

pub use message::{
    fnv1a, Batch, Body, ClientId, DecodeError, Digest, Message, MessageKind, Operation, Origin, Request, RequestId,
};
pub use replica::Replica;

pub const DEFAULT_CALC_INTERVAL: u64 = 500;
pub const DEFAULT_MAX_BATCH: usize = 400;
pub const DEFAULT_REQUEST_TIMEOUT_MS: f64 = 2000.0;
pub const DEFAULT_OMEGA: f64 = 0.5;

/// The configuration instances run under. Leader changes bump `number`;
/// weight-only changes keep it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub number: u32,
    pub config: WeightConfig,
}

impl View {
    pub fn leader(&self) -> ReplicaId {
        self.config.leader()
    }

    /// The view installed after the leader is suspected: the next replica in
    /// cyclic id order that is `alive` leads, taking `V_max` from the
    /// lowest-id non-leader holder if it lacks it.
    pub fn after_timeout(&self, alive: &[bool]) -> View {
        let n = self.config.n();
        let old = self.leader();
        let next = (1..=n).map(|k| (old + k) % n).find(|&r| alive[r]).unwrap_or(old);
        let config = if self.config.holds_max(next) {
            self.config.with_leader(next)
        } else {
            let from = self
                .config
                .r_max()
                .iter()
                .copied()
                .find(|&r| r != old)
                .unwrap_or(old);
            let swapped = self.config.swap(from, next);
            swapped.with_leader(next)
        };
        View {
            number: self.number + 1,
            config,
        }
    }
}

/// Knobs of the self-optimization loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AwareParams {
    pub enabled: bool,
    pub alpha: f64,
    pub calc_interval: u64,
    /// Fraction of instances that carry a DUMMY-PROPOSE.
    pub omega: f64,
    pub window: usize,
    /// A MEASURE is issued every this many decisions.
    pub sync_period: u64,
    pub strategy: Strategy,
    pub sa: SaParams,
    pub rounds: usize,
    pub budget: u128,
}

impl Default for AwareParams {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: DEFAULT_ALPHA,
            calc_interval: DEFAULT_CALC_INTERVAL,
            omega: DEFAULT_OMEGA,
            window: DEFAULT_WINDOW,
            sync_period: DEFAULT_SYNC_PERIOD,
            strategy: Strategy::Auto,
            sa: SaParams::default(),
            rounds: DEFAULT_ROUNDS,
            budget: DEFAULT_EXHAUSTIVE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaParams {
    pub shape: SystemShape,
    pub initial: WeightConfig,
    pub aware: AwareParams,
    pub max_batch: usize,
    pub request_timeout_ms: f64,
    /// Seeds the challenge nonces.
    pub seed: u64,
}

impl ReplicaParams {
    pub fn new(shape: SystemShape, initial: WeightConfig) -> Self {
        Self {
            shape,
            initial,
            aware: AwareParams::default(),
            max_batch: DEFAULT_MAX_BATCH,
            request_timeout_ms: DEFAULT_REQUEST_TIMEOUT_MS,
            seed: 0,
        }
    }
}

/// How a replica deviates from the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Behavior {
    #[default]
    Correct,
    /// Reports all-zero latency vectors.
    ZeroVectors,
    /// Reports a near-zero latency to `partner`.
    Collude { partner: ReplicaId },
    /// Sends no WRITE or ACCEPT but still answers probes.
    SilentConsensus,
}

/// Latency claimed between colluding replicas, in ms.
pub const COLLUSION_CLAIM_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Replica(ReplicaId),
    Client(ClientId),
}

/// A decided instance as seen by one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub cid: Cid,
    pub view: u32,
    pub digest: Digest,
    pub batch: Batch,
    /// Senders of the ACCEPTs that completed the quorum. Empty when the
    /// decision was adopted during a view change.
    pub accept_set: Vec<ReplicaId>,
    pub config: WeightConfig,
    pub time_ms: f64,
}

/// Outcome of one calculation point.
#[derive(Debug, Clone, PartialEq)]
pub struct CalcRecord {
    pub cid: Cid,
    pub m_p: LatencyMatrix,
    pub m_w: LatencyMatrix,
    pub current: ConfigCandidate,
    pub best: ConfigCandidate,
    pub probes: usize,
    pub decision: ReconfigDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { to: Endpoint, msg: Message },
    Proposed { cid: Cid, time_ms: f64, size: usize },
    Decided(Decision),
    Calc(Box<CalcRecord>),
    /// A configuration produced by a calculation becomes active at `from_cid`.
    Reconfigured { from_cid: Cid, view: View },
    SuspectLeader { view: u32 },
}
