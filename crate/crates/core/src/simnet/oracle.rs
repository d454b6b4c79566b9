//! Message-level reference simulation of pipelined weighted consensus.
//!
//! The leader proposes instance `k + 1` the moment it decides `k`. A replica
//! sends its WRITE for `k` once it has the proposal and has itself decided
//! `k − 1`; it sends ACCEPT as soon as WRITE weight `≥ Q_v` has arrived and
//! decides once ACCEPT weight `≥ Q_v` has arrived. Votes are counted on
//! arrival, whatever instance the receiver is working on. There is no
//! jitter, batching or fault: only link delays.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::matrix::LatencyMatrix;
use crate::model::{ReplicaId, SystemShape, Weight, WeightConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Propose,
    Write,
    Accept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    // bit pattern of a non-negative f64, which orders like the value
    time: u64,
    seq: u64,
    kind: Kind,
    instance: usize,
    from: ReplicaId,
    to: ReplicaId,
}

struct Oracle<'a> {
    n: usize,
    q_v: Weight,
    weights: &'a [Weight],
    leader: ReplicaId,
    m_p: &'a LatencyMatrix,
    m_w: &'a LatencyMatrix,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    proposal_at: Vec<Vec<Option<f64>>>,
    write_weight: Vec<Vec<Weight>>,
    written: Vec<Vec<bool>>,
    accept_weight: Vec<Vec<Weight>>,
    accepted: Vec<Vec<Option<f64>>>,
    sent_write: Vec<Vec<bool>>,
}

impl<'a> Oracle<'a> {
    fn push(&mut self, time: f64, kind: Kind, instance: usize, from: ReplicaId, to: ReplicaId) {
        if time.is_infinite() {
            return;
        }
        self.queue.push(Reverse(Event {
            time: time.to_bits(),
            seq: self.seq,
            kind,
            instance,
            from,
            to,
        }));
        self.seq += 1;
    }

    fn propose(&mut self, now: f64, k: usize) {
        for i in 0..self.n {
            let t = now + self.m_p[(self.leader, i)];
            self.push(t, Kind::Propose, k, self.leader, i);
        }
    }

    fn broadcast(&mut self, now: f64, kind: Kind, k: usize, from: ReplicaId) {
        for j in 0..self.n {
            let t = now + self.m_w[(from, j)];
            self.push(t, kind, k, from, j);
        }
    }

    /// Sends replica `i`'s WRITE for `k` if it is ready to.
    fn try_write(&mut self, now: f64, k: usize, i: ReplicaId) {
        if k >= self.sent_write.len() || self.sent_write[k][i] || self.proposal_at[k][i].is_none() {
            return;
        }
        if k > 0 && self.accepted[k - 1][i].is_none() {
            return;
        }
        self.sent_write[k][i] = true;
        self.broadcast(now, Kind::Write, k, i);
    }

    fn run(&mut self, instances: usize) -> Vec<f64> {
        let mut decisions = Vec::with_capacity(instances);
        self.propose(0.0, 0);
        while let Some(Reverse(ev)) = self.queue.pop() {
            let now = f64::from_bits(ev.time);
            let (k, i) = (ev.instance, ev.to);
            match ev.kind {
                Kind::Propose => {
                    self.proposal_at[k][i] = Some(now);
                    self.try_write(now, k, i);
                }
                Kind::Write => {
                    if self.written[k][i] {
                        continue;
                    }
                    self.write_weight[k][i] += self.weights[ev.from];
                    if self.write_weight[k][i] >= self.q_v {
                        self.written[k][i] = true;
                        self.broadcast(now, Kind::Accept, k, i);
                    }
                }
                Kind::Accept => {
                    if self.accepted[k][i].is_some() {
                        continue;
                    }
                    self.accept_weight[k][i] += self.weights[ev.from];
                    if self.accept_weight[k][i] < self.q_v {
                        continue;
                    }
                    self.accepted[k][i] = Some(now);
                    if i == self.leader {
                        decisions.push(now);
                        if decisions.len() == instances {
                            break;
                        }
                        self.propose(now, k + 1);
                    }
                    self.try_write(now, k + 1, i);
                }
            }
        }
        decisions
    }
}

/// Times (ms) at which the leader decides instances `1..=instances`,
/// stopping early if it gets stuck.
pub fn oracle_decision_times(
    shape: &SystemShape,
    config: &WeightConfig,
    m_p: &LatencyMatrix,
    m_w: &LatencyMatrix,
    instances: usize,
) -> Vec<f64> {
    let n = shape.n();
    let mut oracle = Oracle {
        n,
        q_v: shape.q_v(),
        weights: config.weights(),
        leader: config.leader(),
        m_p,
        m_w,
        queue: BinaryHeap::new(),
        seq: 0,
        proposal_at: vec![vec![None; n]; instances],
        write_weight: vec![vec![Weight(0); n]; instances],
        written: vec![vec![false; n]; instances],
        accept_weight: vec![vec![Weight(0); n]; instances],
        accepted: vec![vec![None; n]; instances],
        sent_write: vec![vec![false; n]; instances],
    };
    oracle.run(instances)
}

/// Mean interval between leader decisions over `instances` instances, the
/// first starting at time 0; `+∞` if the leader cannot decide them all.
pub fn oracle_mean_leader_latency(
    shape: &SystemShape,
    config: &WeightConfig,
    m_p: &LatencyMatrix,
    m_w: &LatencyMatrix,
    instances: usize,
) -> f64 {
    if instances == 0 {
        return 0.0;
    }
    let times = oracle_decision_times(shape, config, m_p, m_w, instances);
    if times.len() < instances {
        return f64::INFINITY;
    }
    times[instances - 1] / instances as f64
}
