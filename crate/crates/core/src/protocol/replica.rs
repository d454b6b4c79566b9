use std::collections::{BTreeMap, HashMap, HashSet};

use indexmap::IndexMap;

use super::{
    Action, AwareParams, Batch, Behavior, Body, CalcRecord, Decision, Digest, Endpoint, Message, Operation, Origin,
    ReplicaParams, Request, RequestId, View, COLLUSION_CLAIM_MS,
};
use crate::model::{ReplicaId, SystemShape, Weight};
use crate::monitoring::{dummy_proposer_for, Challenge, LatencyMatrixPair, LatencyMonitor, MeasurePayload, ProbeKind};
use crate::optimizer::{decide, search, ConfigCandidate, SearchRequest, SplitMix64};
use crate::predictor::Predictor;
use crate::Cid;

/// Instances further ahead than this are dropped instead of buffered.
const FUTURE_WINDOW: Cid = 256;

#[derive(Debug, Clone)]
struct Votes {
    seen: Vec<bool>,
    order: Vec<ReplicaId>,
    weight: Weight,
}

impl Votes {
    fn new(n: usize) -> Self {
        Self {
            seen: vec![false; n],
            order: Vec::new(),
            weight: Weight(0),
        }
    }

    fn add(&mut self, sender: ReplicaId, weight: Weight) {
        if !self.seen[sender] {
            self.seen[sender] = true;
            self.order.push(sender);
            self.weight += weight;
        }
    }
}

#[derive(Debug, Clone)]
struct Instance {
    proposal: Option<(Batch, Digest)>,
    writes: HashMap<Digest, Votes>,
    accepts: HashMap<Digest, Votes>,
    sent_write: bool,
    sent_accept: bool,
}

impl Instance {
    fn new() -> Self {
        Self {
            proposal: None,
            writes: HashMap::new(),
            accepts: HashMap::new(),
            sent_write: false,
            sent_accept: false,
        }
    }
}

/// One replica's protocol state. See the module docs for the driving contract.
#[derive(Debug)]
pub struct Replica {
    id: ReplicaId,
    shape: SystemShape,
    aware: AwareParams,
    max_batch: usize,
    request_timeout_ms: f64,
    behavior: Behavior,
    view: View,
    monitor: LatencyMonitor,
    matrices: LatencyMatrixPair,
    rng: SplitMix64,
    last_decided: Cid,
    instance: Instance,
    proposed: bool,
    future: BTreeMap<Cid, Vec<Message>>,
    pending: IndexMap<RequestId, Request>,
    executed: HashSet<RequestId>,
    waiting_since: Option<f64>,
    suspected: bool,
    measure_seq: u64,
    predictor: Predictor,
}

impl Replica {
    pub fn new(id: ReplicaId, params: &ReplicaParams) -> Self {
        let n = params.shape.n();
        Self {
            id,
            shape: params.shape,
            aware: params.aware.clone(),
            max_batch: params.max_batch.max(1),
            request_timeout_ms: params.request_timeout_ms,
            behavior: Behavior::Correct,
            view: View {
                number: 0,
                config: params.initial.clone(),
            },
            monitor: LatencyMonitor::new(id, n, params.aware.window),
            matrices: LatencyMatrixPair::new(n),
            rng: SplitMix64::derive(params.seed, id as u64),
            last_decided: 0,
            instance: Instance::new(),
            proposed: false,
            future: BTreeMap::new(),
            pending: IndexMap::new(),
            executed: HashSet::new(),
            waiting_since: None,
            suspected: false,
            measure_seq: 0,
            predictor: Predictor::new(),
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    pub fn is_leader(&self) -> bool {
        self.view.leader() == self.id
    }

    pub fn last_decided(&self) -> Cid {
        self.last_decided
    }

    pub fn matrices(&self) -> &LatencyMatrixPair {
        &self.matrices
    }

    pub fn monitor(&self) -> &LatencyMonitor {
        &self.monitor
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn set_behavior(&mut self, behavior: Behavior) {
        self.behavior = behavior;
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn on_message(&mut self, now: f64, msg: Message) -> Vec<Action> {
        let mut out = Vec::new();
        let sender = msg.sender as ReplicaId;
        match &msg.body {
            Body::WriteResponse { challenge, .. } => {
                if sender < self.shape.n() {
                    self.monitor
                        .record_response(ProbeKind::Write, sender, now, Challenge { nonce: *challenge });
                }
                return out;
            }
            Body::ProposeResponse { challenge, .. } => {
                if sender < self.shape.n() {
                    self.monitor
                        .record_response(ProbeKind::Propose, sender, now, Challenge { nonce: *challenge });
                }
                return out;
            }
            Body::ClientRequest(req) | Body::Measure(req) => {
                self.add_request(now, req.clone(), &mut out);
                return out;
            }
            Body::ClientReply { .. } | Body::ViewChange { .. } => return out,
            Body::Propose { batch, challenge } | Body::DummyPropose { batch, challenge } => {
                if sender < self.shape.n() && sender != self.id {
                    let echo = Body::ProposeResponse {
                        challenge: *challenge,
                        echo: batch.clone(),
                    };
                    self.send(sender, msg.cid, echo, &mut out);
                }
                if matches!(msg.body, Body::DummyPropose { .. }) {
                    return out;
                }
            }
            Body::Write { digest, challenge } => {
                if sender < self.shape.n() && sender != self.id {
                    let body = Body::WriteResponse {
                        challenge: *challenge,
                        digest: *digest,
                    };
                    self.send(sender, msg.cid, body, &mut out);
                }
            }
            Body::Accept { .. } => {}
        }
        if sender >= self.shape.n() {
            return out;
        }
        let current = self.last_decided + 1;
        if msg.cid == current {
            self.process_current(now, msg, &mut out);
        } else if msg.cid > current && msg.cid <= current + FUTURE_WINDOW {
            self.future.entry(msg.cid).or_default().push(msg);
        }
        out
    }

    /// Checks the request timeout; suspects the leader at most once per view.
    pub fn on_tick(&mut self, now: f64) -> Vec<Action> {
        let mut out = Vec::new();
        if let Some(since) = self.waiting_since {
            if !self.suspected && now - since >= self.request_timeout_ms {
                self.suspected = true;
                out.push(Action::SuspectLeader { view: self.view.number });
                for peer in self.peers() {
                    let body = Body::ViewChange {
                        view: self.view.number + 1,
                    };
                    self.send(peer, self.last_decided + 1, body, &mut out);
                }
            }
        }
        self.propose(now, &mut out);
        out
    }

    /// Switches to `view`, abandoning the undecided instance.
    pub fn install_view(&mut self, now: f64, view: View) -> Vec<Action> {
        let mut out = Vec::new();
        self.view = view;
        self.instance = Instance::new();
        self.proposed = false;
        self.suspected = false;
        self.waiting_since = (!self.pending.is_empty()).then_some(now);
        let current = self.view.number;
        for msgs in self.future.values_mut() {
            msgs.retain(|m| m.view >= current);
        }
        self.propose(now, &mut out);
        out
    }

    /// Adopts a batch other replicas decided as instance `cid`, which must
    /// be the next one for this replica.
    pub fn catch_up(&mut self, now: f64, cid: Cid, batch: &Batch) -> Vec<Action> {
        let mut out = Vec::new();
        if cid != self.last_decided + 1 {
            return out;
        }
        out.push(Action::Decided(Decision {
            cid,
            view: self.view.number,
            digest: batch.digest(),
            batch: batch.clone(),
            accept_set: Vec::new(),
            config: self.view.config.clone(),
            time_ms: now,
        }));
        self.apply_decision(now, cid, batch, false, &mut out);
        out
    }

    fn peers(&self) -> impl Iterator<Item = ReplicaId> {
        let me = self.id;
        (0..self.shape.n()).filter(move |&r| r != me)
    }

    fn send(&self, to: ReplicaId, cid: Cid, body: Body, out: &mut Vec<Action>) {
        out.push(Action::Send {
            to: Endpoint::Replica(to),
            msg: Message {
                view: self.view.number,
                cid,
                sender: self.id as u16,
                body,
            },
        });
    }

    fn add_request(&mut self, now: f64, req: Request, out: &mut Vec<Action>) {
        if self.executed.contains(&req.id) || self.pending.contains_key(&req.id) {
            return;
        }
        self.pending.insert(req.id, req);
        if self.waiting_since.is_none() {
            self.waiting_since = Some(now);
        }
        self.propose(now, out);
    }

    fn propose(&mut self, now: f64, out: &mut Vec<Action>) {
        if !self.is_leader() || self.proposed || self.pending.is_empty() {
            return;
        }
        let cid = self.last_decided + 1;
        let batch = Batch::new(self.pending.values().take(self.max_batch).cloned().collect());
        self.proposed = true;
        out.push(Action::Proposed {
            cid,
            time_ms: now,
            size: batch.len(),
        });
        for peer in self.peers() {
            let nonce = self.rng.next_u64();
            let challenge = self.monitor.issue_challenge(ProbeKind::Propose, peer, now, nonce).nonce;
            let body = Body::Propose {
                batch: batch.clone(),
                challenge,
            };
            self.send(peer, cid, body, out);
        }
        self.accept_proposal(now, cid, batch, out);
    }

    fn process_current(&mut self, now: f64, msg: Message, out: &mut Vec<Action>) {
        if msg.view != self.view.number {
            return;
        }
        let sender = msg.sender as ReplicaId;
        match msg.body {
            Body::Propose { batch, .. } => {
                if sender != self.view.leader() || self.instance.proposal.is_some() || batch.is_empty() {
                    return;
                }
                if self.aware.enabled && dummy_proposer_for(msg.cid, self.aware.omega, self.shape.n(), sender) == Some(self.id) {
                    for peer in self.peers() {
                        let nonce = self.rng.next_u64();
                        let challenge = self.monitor.issue_challenge(ProbeKind::Propose, peer, now, nonce).nonce;
                        let body = Body::DummyPropose {
                            batch: batch.clone(),
                            challenge,
                        };
                        self.send(peer, msg.cid, body, out);
                    }
                }
                self.accept_proposal(now, msg.cid, batch, out);
            }
            Body::Write { digest, .. } => {
                let w = self.view.config.weight_of(sender);
                let n = self.shape.n();
                self.instance.writes.entry(digest).or_insert_with(|| Votes::new(n)).add(sender, w);
                self.check_progress(now, out);
            }
            Body::Accept { digest } => {
                let w = self.view.config.weight_of(sender);
                let n = self.shape.n();
                self.instance.accepts.entry(digest).or_insert_with(|| Votes::new(n)).add(sender, w);
                self.check_progress(now, out);
            }
            _ => {}
        }
    }

    fn accept_proposal(&mut self, now: f64, cid: Cid, batch: Batch, out: &mut Vec<Action>) {
        let digest = batch.digest();
        self.instance.proposal = Some((batch, digest));
        if !self.instance.sent_write {
            self.instance.sent_write = true;
            if self.behavior != Behavior::SilentConsensus {
                for peer in self.peers() {
                    let nonce = self.rng.next_u64();
                    let challenge = self.monitor.issue_challenge(ProbeKind::Write, peer, now, nonce).nonce;
                    self.send(peer, cid, Body::Write { digest, challenge }, out);
                }
                let (n, w) = (self.shape.n(), self.view.config.weight_of(self.id));
                self.instance.writes.entry(digest).or_insert_with(|| Votes::new(n)).add(self.id, w);
            }
        }
        self.check_progress(now, out);
    }

    fn check_progress(&mut self, now: f64, out: &mut Vec<Action>) {
        let Some((_, digest)) = self.instance.proposal else {
            return;
        };
        let q_v = self.shape.q_v();
        let cid = self.last_decided + 1;
        let written = self.instance.writes.get(&digest).is_some_and(|v| v.weight >= q_v);
        if written && !self.instance.sent_accept {
            self.instance.sent_accept = true;
            if self.behavior != Behavior::SilentConsensus {
                for peer in self.peers() {
                    self.send(peer, cid, Body::Accept { digest }, out);
                }
                let (n, w) = (self.shape.n(), self.view.config.weight_of(self.id));
                self.instance.accepts.entry(digest).or_insert_with(|| Votes::new(n)).add(self.id, w);
            }
        }
        let accept_set = match self.instance.accepts.get(&digest) {
            Some(v) if v.weight >= q_v => v.order.clone(),
            _ => return,
        };
        let (batch, digest) = self.instance.proposal.take().expect("proposal checked above");
        out.push(Action::Decided(Decision {
            cid,
            view: self.view.number,
            digest,
            batch: batch.clone(),
            accept_set,
            config: self.view.config.clone(),
            time_ms: now,
        }));
        self.apply_decision(now, cid, &batch, true, out);
    }

    fn apply_decision(&mut self, now: f64, cid: Cid, batch: &Batch, live: bool, out: &mut Vec<Action>) {
        self.last_decided = cid;
        let digest = batch.digest();
        for req in &batch.requests {
            if !self.executed.insert(req.id) {
                continue;
            }
            self.pending.shift_remove(&req.id);
            match (&req.op, req.id.origin) {
                (Operation::Measure(payload), Origin::Replica(from)) if payload.sender == from => {
                    // malformed vectors are ignored, leaving the row as it was
                    let _ = self.matrices.apply_payload(payload, cid);
                }
                (Operation::Client(_), Origin::Client(client)) => out.push(Action::Send {
                    to: Endpoint::Client(client),
                    msg: Message {
                        view: self.view.number,
                        cid,
                        sender: self.id as u16,
                        body: Body::ClientReply { seq: req.id.seq, digest },
                    },
                }),
                _ => {}
            }
        }
        self.instance = Instance::new();
        self.proposed = false;
        self.waiting_since = (!self.pending.is_empty()).then_some(now);
        self.future.retain(|&c, _| c > cid);

        if self.aware.enabled {
            if self.aware.sync_period > 0 && cid.is_multiple_of(self.aware.sync_period) {
                self.emit_measure(now, out);
            }
            if self.aware.calc_interval > 0 && cid.is_multiple_of(self.aware.calc_interval) {
                self.calculate(cid, out);
            }
        }
        if live {
            self.propose(now, out);
            if let Some(msgs) = self.future.remove(&(cid + 1)) {
                for msg in msgs {
                    // stop once an earlier buffered message completed the instance
                    if self.last_decided == cid {
                        self.process_current(now, msg, out);
                    }
                }
            }
        }
    }

    /// Latency vectors as this replica reports them, including any lie.
    fn measurement(&self) -> MeasurePayload {
        let mut propose = self.monitor.snapshot_vector(ProbeKind::Propose).values;
        let mut write = self.monitor.snapshot_vector(ProbeKind::Write).values;
        match self.behavior {
            Behavior::ZeroVectors => {
                propose.iter_mut().for_each(|v| *v = 0.0);
                write.iter_mut().for_each(|v| *v = 0.0);
            }
            Behavior::Collude { partner } if partner < write.len() => {
                propose[partner] = COLLUSION_CLAIM_MS;
                write[partner] = COLLUSION_CLAIM_MS;
            }
            _ => {}
        }
        MeasurePayload {
            sender: self.id,
            propose,
            write,
        }
    }

    fn emit_measure(&mut self, now: f64, out: &mut Vec<Action>) {
        self.measure_seq += 1;
        let req = Request::measure(self.measurement(), self.measure_seq);
        for peer in self.peers() {
            self.send(peer, self.last_decided, Body::Measure(req.clone()), out);
        }
        if !self.executed.contains(&req.id) {
            self.pending.insert(req.id, req);
            self.waiting_since.get_or_insert(now);
        }
    }

    fn calculate(&mut self, cid: Cid, out: &mut Vec<Action>) {
        self.matrices.expire_stale(cid, self.aware.calc_interval);
        let (m_p, m_w) = self.matrices.sanitized();
        let config = self.view.config.clone();
        let current = ConfigCandidate {
            predicted: self.predictor.predict(&self.shape, &config, &m_p, &m_w, self.aware.rounds),
            config,
        };
        let candidates = self.shape.all_replicas();
        let req = SearchRequest {
            shape: &self.shape,
            m_p: &m_p,
            m_w: &m_w,
            current: &current.config,
            leader_candidates: &candidates,
            rounds: self.aware.rounds,
            seed: cid,
            sa: self.aware.sa,
            budget: self.aware.budget,
        };
        let Ok(outcome) = search(&req, self.aware.strategy) else {
            return;
        };
        let decision = decide(&current, &outcome.best, self.aware.alpha);
        if let Some(new_config) = &decision.new_config {
            if decision.leader_change {
                self.view.number += 1;
            }
            self.view.config = new_config.clone();
        }
        let reconfigured = decision.reconfigure;
        out.push(Action::Calc(Box::new(CalcRecord {
            cid,
            m_p,
            m_w,
            current,
            best: outcome.best,
            probes: outcome.probes,
            decision,
        })));
        if reconfigured {
            out.push(Action::Reconfigured {
                from_cid: cid + 1,
                view: self.view.clone(),
            });
        }
    }
}
