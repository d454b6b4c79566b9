//! One-sided latency monitoring, synchronized latency matrices and sanitization.
//!
//! A replica attaches a random challenge to each monitored message and only
//! accepts a response that echoes an outstanding challenge issued to that
//! peer. Half the round trip is taken as the one-way latency. Per-peer
//! moving medians form the vectors `L^P` and `L^W` that every replica
//! disseminates in the ordered stream (MEASURE), so that after the same
//! decided prefix all correct replicas hold identical matrices.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::LatencyMatrix;
use crate::model::ReplicaId;
use crate::Cid;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_SYNC_PERIOD: u64 = 10;

/// Outstanding challenges kept per peer before the oldest are forgotten.
const MAX_OUTSTANDING_PER_PEER: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitoringError {
    #[error("vector from replica {sender} has {len} entries, expected {n}")]
    WrongLength { sender: ReplicaId, len: usize, n: usize },
    #[error("sender {sender} out of range for n = {n}")]
    SenderOutOfRange { sender: ReplicaId, n: usize },
    #[error("malformed MEASURE payload: {0}")]
    Malformed(&'static str),
}

/// Which protocol stage a probe measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeKind {
    Propose,
    Write,
}

impl ProbeKind {
    pub fn tag(self) -> u8 {
        match self {
            ProbeKind::Propose => 0,
            ProbeKind::Write => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ProbeKind::Propose),
            1 => Some(ProbeKind::Write),
            _ => None,
        }
    }
}

/// Nonce bound to one outgoing monitored message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Challenge {
    pub nonce: u64,
}

/// Median of `samples`; the mean of the two middle values for even lengths,
/// `+∞` when empty.
pub fn median(samples: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = samples.into_iter().collect();
    if v.is_empty() {
        return f64::INFINITY;
    }
    v.sort_unstable_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Bounded FIFO of the most recent one-way samples for one peer.
#[derive(Debug, Clone)]
pub struct LatencyWindow {
    samples: VecDeque<f64>,
    capacity: usize,
}

impl LatencyWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity.min(1024)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, sample: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn median(&self) -> f64 {
        median(self.samples.iter().copied())
    }
}

/// A replica's view of its own links, `values[j]` being owner → `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyVector {
    pub owner: ReplicaId,
    pub kind: ProbeKind,
    pub values: Vec<f64>,
}

/// Per-peer windows for both probe kinds plus the outstanding challenges.
#[derive(Debug, Clone)]
pub struct LatencyMonitor {
    owner: ReplicaId,
    propose: Vec<LatencyWindow>,
    write: Vec<LatencyWindow>,
    outstanding: HashMap<(ReplicaId, u64), (ProbeKind, f64)>,
    issue_order: Vec<VecDeque<u64>>,
}

impl LatencyMonitor {
    pub fn new(owner: ReplicaId, n: usize, window_size: usize) -> Self {
        Self {
            owner,
            propose: (0..n).map(|_| LatencyWindow::new(window_size)).collect(),
            write: (0..n).map(|_| LatencyWindow::new(window_size)).collect(),
            outstanding: HashMap::new(),
            issue_order: vec![VecDeque::new(); n],
        }
    }

    pub fn owner(&self) -> ReplicaId {
        self.owner
    }

    pub fn n(&self) -> usize {
        self.write.len()
    }

    /// Registers `nonce` as outstanding for a message of `kind` sent to `peer` at `t_send`.
    pub fn issue_challenge(&mut self, kind: ProbeKind, peer: ReplicaId, t_send: f64, nonce: u64) -> Challenge {
        let order = &mut self.issue_order[peer];
        if order.len() == MAX_OUTSTANDING_PER_PEER {
            if let Some(old) = order.pop_front() {
                self.outstanding.remove(&(peer, old));
            }
        }
        order.push_back(nonce);
        self.outstanding.insert((peer, nonce), (kind, t_send));
        Challenge { nonce }
    }

    pub fn is_outstanding(&self, peer: ReplicaId, challenge: Challenge) -> bool {
        self.outstanding.contains_key(&(peer, challenge.nonce))
    }

    /// Records `(t_recv − t_send) / 2` for `peer` if `challenge` is outstanding
    /// for that peer and kind, retiring it. Unknown or replayed nonces are
    /// rejected and leave the windows untouched.
    pub fn record_probe(&mut self, kind: ProbeKind, peer: ReplicaId, t_send: f64, t_recv: f64, challenge: Challenge) -> bool {
        if peer >= self.n() || t_recv < t_send {
            return false;
        }
        match self.outstanding.get(&(peer, challenge.nonce)) {
            Some(&(k, _)) if k == kind => {}
            _ => return false,
        }
        self.retire(peer, challenge.nonce);
        let window = match kind {
            ProbeKind::Propose => &mut self.propose[peer],
            ProbeKind::Write => &mut self.write[peer],
        };
        window.push((t_recv - t_send) / 2.0);
        true
    }

    /// [`record_probe`](Self::record_probe) using the send time stored with the challenge.
    pub fn record_response(&mut self, kind: ProbeKind, peer: ReplicaId, t_recv: f64, challenge: Challenge) -> bool {
        match self.outstanding.get(&(peer, challenge.nonce)) {
            Some(&(_, t_send)) => self.record_probe(kind, peer, t_send, t_recv, challenge),
            None => false,
        }
    }

    fn retire(&mut self, peer: ReplicaId, nonce: u64) {
        self.outstanding.remove(&(peer, nonce));
        let order = &mut self.issue_order[peer];
        if let Some(pos) = order.iter().position(|&x| x == nonce) {
            order.remove(pos);
        }
    }

    pub fn window(&self, kind: ProbeKind, peer: ReplicaId) -> &LatencyWindow {
        match kind {
            ProbeKind::Propose => &self.propose[peer],
            ProbeKind::Write => &self.write[peer],
        }
    }

    /// Moving medians per peer; `+∞` for peers without samples, `0` for self.
    pub fn snapshot_vector(&self, kind: ProbeKind) -> LatencyVector {
        let windows = match kind {
            ProbeKind::Propose => &self.propose,
            ProbeKind::Write => &self.write,
        };
        let values = windows
            .iter()
            .enumerate()
            .map(|(j, w)| if j == self.owner { 0.0 } else { w.median() })
            .collect();
        LatencyVector {
            owner: self.owner,
            kind,
            values,
        }
    }
}

/// Content of a MEASURE request: one replica's PROPOSE and WRITE vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePayload {
    pub sender: ReplicaId,
    pub propose: Vec<f64>,
    pub write: Vec<f64>,
}

impl MeasurePayload {
    /// `sender: u16`, `n: u16`, then for each vector a kind tag byte followed
    /// by `n` big-endian `f64` milliseconds (`+∞` as the IEEE infinity).
    pub fn encode(&self, out: &mut Vec<u8>) {
        let n = self.write.len();
        out.extend_from_slice(&(self.sender as u16).to_be_bytes());
        out.extend_from_slice(&(n as u16).to_be_bytes());
        for (kind, values) in [(ProbeKind::Propose, &self.propose), (ProbeKind::Write, &self.write)] {
            out.push(kind.tag());
            for &v in values.iter().take(n) {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }

    /// Decodes one payload from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), MonitoringError> {
        let short = MonitoringError::Malformed("truncated");
        if bytes.len() < 4 {
            return Err(short);
        }
        let sender = u16::from_be_bytes([bytes[0], bytes[1]]) as ReplicaId;
        let n = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
        let mut pos = 4;
        let mut vectors: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for expected in [ProbeKind::Propose, ProbeKind::Write] {
            let tag = *bytes.get(pos).ok_or(short.clone())?;
            if ProbeKind::from_tag(tag) != Some(expected) {
                return Err(MonitoringError::Malformed("unexpected kind tag"));
            }
            pos += 1;
            let end = pos + 8 * n;
            let chunk = bytes.get(pos..end).ok_or(short.clone())?;
            vectors[expected.tag() as usize] = chunk
                .chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            pos = end;
        }
        let [propose, write] = vectors;
        Ok((Self { sender, propose, write }, pos))
    }
}

/// The synchronized `M^P` / `M^W` pair. Row `i` is only ever written by a
/// decided MEASURE from replica `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrixPair {
    pub propose: LatencyMatrix,
    pub write: LatencyMatrix,
    freshness: Vec<Option<Cid>>,
}

impl LatencyMatrixPair {
    pub fn new(n: usize) -> Self {
        Self {
            propose: LatencyMatrix::unknown(n),
            write: LatencyMatrix::unknown(n),
            freshness: vec![None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.write.n()
    }

    /// Consensus id at which each row owner's last MEASURE was decided.
    pub fn freshness(&self) -> &[Option<Cid>] {
        &self.freshness
    }

    pub fn apply_measure(
        &mut self,
        sender: ReplicaId,
        l_p: &[f64],
        l_w: &[f64],
        decided_at: Cid,
    ) -> Result<(), MonitoringError> {
        let n = self.n();
        if sender >= n {
            return Err(MonitoringError::SenderOutOfRange { sender, n });
        }
        for v in [l_p, l_w] {
            if v.len() != n {
                return Err(MonitoringError::WrongLength { sender, len: v.len(), n });
            }
        }
        // a replica cannot claim a non-zero or negative self link
        let clean = |v: &[f64], j: usize| if j == sender { 0.0 } else if v[j].is_nan() { f64::INFINITY } else { v[j].max(0.0) };
        for j in 0..n {
            self.propose[(sender, j)] = clean(l_p, j);
            self.write[(sender, j)] = clean(l_w, j);
        }
        self.freshness[sender] = Some(decided_at);
        Ok(())
    }

    pub fn apply_payload(&mut self, payload: &MeasurePayload, decided_at: Cid) -> Result<(), MonitoringError> {
        self.apply_measure(payload.sender, &payload.propose, &payload.write, decided_at)
    }

    /// Resets to `+∞` every row whose last MEASURE is older than the closed
    /// window `[current_cid − c, current_cid]`, or that never arrived.
    pub fn expire_stale(&mut self, current_cid: Cid, calc_interval: u64) {
        let oldest = current_cid.saturating_sub(calc_interval);
        for i in 0..self.n() {
            let fresh = matches!(self.freshness[i], Some(at) if at >= oldest);
            if !fresh {
                for m in [&mut self.propose, &mut self.write] {
                    for (j, v) in m.row_mut(i).iter_mut().enumerate() {
                        *v = if i == j { 0.0 } else { f64::INFINITY };
                    }
                }
            }
        }
    }

    /// Sanitized `(M̂^P, M̂^W)`. PROPOSE entries that were never measured but
    /// have a finite WRITE latency fall back to the WRITE latency.
    pub fn sanitized(&self) -> (LatencyMatrix, LatencyMatrix) {
        let w = sanitize(&self.write);
        let mut p = sanitize(&self.propose);
        for i in 0..p.n() {
            for j in 0..p.n() {
                if p[(i, j)].is_infinite() && w[(i, j)].is_finite() {
                    p[(i, j)] = w[(i, j)];
                }
            }
        }
        (p, w)
    }
}

/// Pairwise maximum: `out[i][j] = max(m[i][j], m[j][i])`.
pub fn sanitize(m: &LatencyMatrix) -> LatencyMatrix {
    let n = m.n();
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = m[(i, j)].max(m[(j, i)]);
        }
    }
    out
}

/// The non-leader scheduled to broadcast a DUMMY-PROPOSE in instance `cid`.
///
/// Instance `cid` carries a dummy proposal when `⌊cid·ω⌋` increments, so a
/// fraction `ω` of instances do. Those slots rotate over the non-leaders in
/// id order.
pub fn dummy_proposer_for(cid: Cid, omega: f64, n: usize, leader: ReplicaId) -> Option<ReplicaId> {
    if n < 2 || omega <= 0.0 || cid == 0 {
        return None;
    }
    let omega = omega.min(1.0);
    let slots = (cid as f64 * omega).floor() as u64;
    let before = ((cid - 1) as f64 * omega).floor() as u64;
    if slots == before {
        return None;
    }
    let idx = ((slots - 1) % (n as u64 - 1)) as usize;
    let proposer = if idx < leader { idx } else { idx + 1 };
    (proposer < n).then_some(proposer)
}
