//! Deterministic consensus-latency prediction.
//!
//! [`form_qv`] computes, per replica, when the accumulated weight of votes
//! arriving over the WRITE matrix reaches `Q_v`. [`predict_latency`] chains
//! PROPOSE, WRITE and ACCEPT for `r` pipelined rounds: each replica enters
//! the next round's WRITE stage no earlier than it finished the previous
//! one (its offset relative to the leader), and the result is the leader's
//! mean per-round latency.
//!
//! The round recurrence is a function of the offset vector only, so once an
//! offset vector repeats the remaining rounds are known. Repeats are
//! detected by exact bit comparison and replayed, which yields the same sum
//! as simulating every round.

use crate::matrix::LatencyMatrix;
use crate::model::{ReplicaId, SystemShape, Weight, WeightConfig};

/// Default number of amortization rounds.
pub const DEFAULT_ROUNDS: usize = 1000;

/// How many recent offset vectors are compared when looking for a cycle.
const CYCLE_MEMORY: usize = 32;

/// Per-replica stage completion times in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTimes(pub Vec<f64>);

/// Stage times of one simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub proposed: Vec<f64>,
    pub written: Vec<f64>,
    pub accepted: Vec<f64>,
}

/// Earliest time each replica has received `Q_v` weight of votes when
/// replica `j` casts its vote at `start[j]` and it travels `m_w[(j, i)]`.
///
/// Replicas that can never accumulate `Q_v` over finite links get `+∞`.
pub fn form_qv(shape: &SystemShape, m_w: &LatencyMatrix, start: &[f64], weights: &[Weight]) -> StageTimes {
    let mut out = vec![0.0; start.len()];
    let mut scratch = Vec::with_capacity(start.len());
    form_qv_into(shape.q_v(), m_w, start, weights, &mut scratch, &mut out);
    StageTimes(out)
}

fn form_qv_into(
    q_v: Weight,
    m_w: &LatencyMatrix,
    start: &[f64],
    weights: &[Weight],
    arrivals: &mut Vec<f64>,
    out: &mut [f64],
) {
    let n = start.len();
    let m = m_w.as_slice();
    for (i, slot) in out.iter_mut().enumerate() {
        arrivals.clear();
        arrivals.extend((0..n).map(|j| start[j] + m[j * n + i]));
        // The quorum forms at the earliest arrival t whose weight of
        // arrivals no later than t reaches Q_v.
        let mut best = f64::INFINITY;
        for &t in arrivals.iter() {
            if t >= best {
                continue;
            }
            let acc: u64 = arrivals
                .iter()
                .zip(weights)
                .map(|(&a, w)| if a <= t { w.0 } else { 0 })
                .sum();
            if acc >= q_v.0 {
                best = t;
            }
        }
        *slot = best;
    }
}

/// Reusable buffers so repeated predictions do not allocate.
#[derive(Debug, Default)]
pub struct Predictor {
    arrivals: Vec<f64>,
    offsets: Vec<f64>,
    proposed: Vec<f64>,
    written: Vec<f64>,
    accepted: Vec<f64>,
    history: Vec<(u64, Vec<f64>)>,
    latencies: Vec<f64>,
}

impl Predictor {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        self.offsets.clear();
        self.offsets.resize(n, 0.0);
        self.proposed.resize(n, 0.0);
        self.written.resize(n, 0.0);
        self.accepted.resize(n, 0.0);
        self.history.clear();
        self.latencies.clear();
    }

    /// Runs one round from the current offsets and returns the leader's latency.
    fn round(&mut self, q_v: Weight, leader: ReplicaId, weights: &[Weight], m_p: &LatencyMatrix, m_w: &LatencyMatrix) -> f64 {
        let n = self.offsets.len();
        for i in 0..n {
            self.proposed[i] = m_p[(leader, i)].max(self.offsets[i]);
        }
        form_qv_into(q_v, m_w, &self.proposed, weights, &mut self.arrivals, &mut self.written);
        form_qv_into(q_v, m_w, &self.written, weights, &mut self.arrivals, &mut self.accepted);
        let lead = self.accepted[leader];
        if lead.is_finite() {
            for i in 0..n {
                self.offsets[i] = self.accepted[i] - lead;
            }
        }
        lead
    }

    /// Stage times of the first round (all offsets zero).
    pub fn first_round(&mut self, shape: &SystemShape, config: &WeightConfig, m_p: &LatencyMatrix, m_w: &LatencyMatrix) -> RoundTrace {
        self.reset(shape.n());
        self.round(shape.q_v(), config.leader(), config.weights(), m_p, m_w);
        RoundTrace {
            proposed: self.proposed.clone(),
            written: self.written.clone(),
            accepted: self.accepted.clone(),
        }
    }

    /// Mean leader consensus latency over `rounds` pipelined rounds, `+∞`
    /// if the leader cannot complete a round.
    pub fn predict(&mut self, shape: &SystemShape, config: &WeightConfig, m_p: &LatencyMatrix, m_w: &LatencyMatrix, rounds: usize) -> f64 {
        let n = shape.n();
        debug_assert_eq!(m_p.n(), n);
        debug_assert_eq!(m_w.n(), n);
        let rounds = rounds.max(1);
        let q_v = shape.q_v();
        let leader = config.leader();
        let weights = config.weights();
        self.reset(n);

        let mut sum = 0.0;
        let mut done = 0;
        while done < rounds {
            let lat = self.round(q_v, leader, weights, m_p, m_w);
            if lat.is_infinite() {
                return f64::INFINITY;
            }
            sum += lat;
            self.latencies.push(lat);
            done += 1;
            if done == rounds {
                break;
            }
            if let Some(period) = self.find_cycle() {
                // rounds done-period+1 ..= done repeat forever
                let cycle = &self.latencies[self.latencies.len() - period..];
                'replay: loop {
                    for &lat in cycle {
                        if done == rounds {
                            break 'replay;
                        }
                        sum += lat;
                        done += 1;
                    }
                }
                break;
            }
        }
        sum / rounds as f64
    }

    /// Remembers the current offsets; returns the cycle length if they were seen recently.
    fn find_cycle(&mut self) -> Option<usize> {
        let hash = hash_bits(&self.offsets);
        for (age, (h, state)) in self.history.iter().rev().enumerate() {
            if *h == hash && state.iter().zip(&self.offsets).all(|(a, b)| a.to_bits() == b.to_bits()) {
                return Some(age + 1);
            }
        }
        if self.history.len() == CYCLE_MEMORY {
            let mut oldest = self.history.remove(0);
            oldest.0 = hash;
            oldest.1.clear();
            oldest.1.extend_from_slice(&self.offsets);
            self.history.push(oldest);
        } else {
            self.history.push((hash, self.offsets.clone()));
        }
        None
    }
}

fn hash_bits(values: &[f64]) -> u64 {
    // FNV-1a over the IEEE bit patterns
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Mean leader consensus latency of `config` over `rounds` rounds.
pub fn predict_latency(shape: &SystemShape, config: &WeightConfig, m_p: &LatencyMatrix, m_w: &LatencyMatrix, rounds: usize) -> f64 {
    Predictor::new().predict(shape, config, m_p, m_w, rounds)
}

/// Leader latency of every round, computed without cycle shortcuts. Used to
/// cross-check the shortcut and for diagnostics.
pub fn round_latencies(shape: &SystemShape, config: &WeightConfig, m_p: &LatencyMatrix, m_w: &LatencyMatrix, rounds: usize) -> Vec<f64> {
    let mut p = Predictor::new();
    p.reset(shape.n());
    (0..rounds)
        .map(|_| p.round(shape.q_v(), config.leader(), config.weights(), m_p, m_w))
        .collect()
}
