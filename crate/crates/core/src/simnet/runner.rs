use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use super::kernel::{Scheduler, SimTime};
use super::link::{DelayOverride, LinkModel};
use super::metrics::{CalcEntry, ClientRecord, ConfigPeriod, EventRecord, InstanceRecord, MetricsLog};
use super::scenario::{At, Fault, Resolved, Scenario, ScenarioError};
use crate::model::{ReplicaId, Weight, WeightConfig};
use crate::optimizer::SplitMix64;
use crate::protocol::{
    fnv1a, Action, Batch, Behavior, Body, CalcRecord, ClientId, Decision, Digest, Endpoint, Message, Replica,
    ReplicaParams, Request,
};
use crate::Cid;

/// Replicas check their request timers this often.
pub const TICK_MS: f64 = 100.0;

/// Upper bound on simulated time for runs that only stop on request counts.
pub const MAX_SIM_MS: f64 = 1e8;

/// Upper bound of the uniform client think time, in ms.
pub const THINK_TIME_MS: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant violated: {name}: {detail}")]
    Invariant { name: &'static str, detail: String },
}

fn violation(name: &'static str, detail: impl Into<String>) -> RunError {
    RunError::Invariant {
        name,
        detail: detail.into(),
    }
}

enum Ev {
    Deliver { from: Endpoint, to: Endpoint, bytes: Vec<u8> },
    Tick(ReplicaId),
    ClientSend(usize),
    Fault(usize),
    ViewChange(u32),
}

struct ClientState {
    site: usize,
    reply_quorum: usize,
    limit: Option<u64>,
    sent: u64,
    done: u64,
    in_flight: Option<(u64, f64)>,
    replies: Vec<(ReplicaId, Digest)>,
    rng: SplitMix64,
}

/// One simulated deployment: replicas, clients, links and the fault script.
pub struct Simulation {
    res: Resolved,
    sched: Scheduler<Ev>,
    links: LinkModel,
    nodes: usize,
    link_rngs: Vec<SplitMix64>,
    fifo: Vec<SimTime>,
    replicas: Vec<Replica>,
    crashed: Vec<bool>,
    byzantine: Vec<bool>,
    clients: Vec<ClientState>,
    cid_events: Vec<(Cid, usize)>,
    max_decided: Cid,
    batches: Vec<Batch>,
    agreed: Vec<Digest>,
    last_cid: Vec<Cid>,
    proposed_at: HashMap<(ReplicaId, Cid), f64>,
    calc_prints: HashMap<Cid, (u64, ReplicaId)>,
    quorum_masks: HashMap<String, HashSet<u64>>,
    logged_reconfigs: HashSet<Cid>,
    calc_best: HashMap<Cid, f64>,
    completed: u64,
    log: MetricsLog,
}

impl Simulation {
    pub fn new(res: Resolved) -> Self {
        let n = res.shape.n();
        let mut clients = Vec::new();
        for group in &res.clients {
            for _ in 0..group.count {
                let id = clients.len() as u64;
                clients.push(ClientState {
                    site: group.site,
                    reply_quorum: group.reply_quorum,
                    limit: group.requests,
                    sent: 0,
                    done: 0,
                    in_flight: None,
                    replies: Vec::new(),
                    rng: SplitMix64::derive(res.seed, 1_000_000 + id),
                });
            }
        }
        let nodes = n + clients.len();
        let link_rngs = (0..nodes * nodes)
            .map(|l| SplitMix64::derive(res.seed, 2_000_000 + l as u64))
            .collect();
        let mut params = ReplicaParams::new(res.shape, res.initial.clone());
        params.aware = res.aware.clone();
        params.max_batch = res.max_batch;
        params.request_timeout_ms = res.request_timeout_ms;
        params.seed = res.seed;
        let replicas = (0..n).map(|r| Replica::new(r, &params)).collect();

        let mut sched = Scheduler::new();
        let mut cid_events = Vec::new();
        for (idx, (at, _)) in res.events.iter().enumerate() {
            match *at {
                At::Ms(t) => sched.schedule(SimTime::from_ms(t), Ev::Fault(idx)),
                At::Cid(c) => cid_events.push((c, idx)),
            }
        }
        cid_events.sort_by_key(|&(c, idx)| (c, idx));
        for r in 0..n {
            sched.schedule(SimTime::from_ms(TICK_MS), Ev::Tick(r));
        }
        for (c, state) in clients.iter_mut().enumerate() {
            let think = state.rng.next_f64() * THINK_TIME_MS;
            sched.schedule(SimTime::from_ms(think), Ev::ClientSend(c));
        }

        let log = MetricsLog {
            labels: res.labels.clone(),
            periods: vec![ConfigPeriod {
                from_ms: 0.0,
                to_ms: f64::INFINITY,
                from_cid: 1,
                config: res.initial.clone(),
                predicted_ms: None,
            }],
            ..MetricsLog::default()
        };
        Self {
            links: LinkModel::new(res.matrix.clone(), res.jitter),
            sched,
            nodes,
            link_rngs,
            fifo: vec![SimTime::ZERO; nodes * nodes],
            replicas,
            crashed: vec![false; n],
            byzantine: vec![false; n],
            clients,
            cid_events,
            max_decided: 0,
            batches: Vec::new(),
            agreed: Vec::new(),
            last_cid: vec![0; n],
            proposed_at: HashMap::new(),
            calc_prints: HashMap::new(),
            quorum_masks: HashMap::new(),
            logged_reconfigs: HashSet::new(),
            calc_best: HashMap::new(),
            completed: 0,
            log,
            res,
        }
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    fn now_ms(&self) -> f64 {
        self.sched.now().as_ms()
    }

    fn correct(&self, r: ReplicaId) -> bool {
        !self.crashed[r] && !self.byzantine[r]
    }

    fn node(&self, e: Endpoint) -> usize {
        match e {
            Endpoint::Replica(r) => r,
            Endpoint::Client(c) => self.res.shape.n() + c as usize,
        }
    }

    fn site(&self, e: Endpoint) -> usize {
        match e {
            Endpoint::Replica(r) => r,
            Endpoint::Client(c) => self.clients[c as usize].site,
        }
    }

    fn event(&mut self, kind: &str, detail: String) {
        self.log.events.push(EventRecord {
            time_ms: self.now_ms(),
            kind: kind.to_string(),
            detail,
        });
    }

    fn transmit(&mut self, from: Endpoint, to: Endpoint, msg: &Message) {
        if let Endpoint::Replica(r) = from {
            if self.crashed[r] {
                return;
            }
        }
        let (a, b) = (self.node(from), self.node(to));
        let link = a * self.nodes + b;
        let egress = match from {
            Endpoint::Replica(r) => Some(r),
            Endpoint::Client(_) => None,
        };
        let ms = self.links.sample(self.site(from), self.site(to), egress, &mut self.link_rngs[link]);
        if ms.is_infinite() {
            return;
        }
        let at = self.sched.now().saturating_add(SimTime::from_ms(ms)).max(self.fifo[link]);
        self.fifo[link] = at;
        self.log.messages += 1;
        self.sched.schedule(
            at,
            Ev::Deliver {
                from,
                to,
                bytes: msg.to_bytes(),
            },
        );
    }

    /// Runs to the end of the scenario.
    pub fn run(mut self) -> Result<MetricsLog, RunError> {
        self.drive()?;
        Ok(self.log)
    }

    /// Like [`Simulation::run`], also handing back the replicas' final state.
    pub fn run_with_replicas(mut self) -> Result<(MetricsLog, Vec<Replica>), RunError> {
        self.drive()?;
        Ok((self.log, self.replicas))
    }

    fn drive(&mut self) -> Result<(), RunError> {
        let horizon = self.res.horizon_ms.unwrap_or(MAX_SIM_MS).min(MAX_SIM_MS);
        while let Some(t) = self.sched.peek_time() {
            if t.as_ms() > horizon || self.finished() {
                break;
            }
            let (_, ev) = self.sched.pop().expect("peeked");
            self.step(ev)?;
        }
        let end = self.now_ms();
        self.finish(end);
        Ok(())
    }

    fn finished(&self) -> bool {
        if let Some(total) = self.res.total_requests {
            if self.completed >= total {
                return true;
            }
        }
        !self.clients.is_empty() && self.clients.iter().all(|c| c.limit.is_some_and(|l| c.done >= l))
    }

    fn finish(&mut self, end: f64) {
        self.log.end_ms = end;
        if let Some(last) = self.log.periods.last_mut() {
            last.to_ms = end;
        }
        let mut first_calc: BTreeMap<Cid, &CalcEntry> = BTreeMap::new();
        for c in &self.log.calcs {
            first_calc.entry(c.record.cid).or_insert(c);
        }
        for p in &mut self.log.periods {
            let during = first_calc
                .values()
                .find(|c| c.time_ms >= p.from_ms && c.time_ms < p.to_ms && c.record.current.config == p.config);
            if let Some(c) = during {
                p.predicted_ms = Some(c.record.current.predicted);
            } else if p.predicted_ms.is_none() {
                p.predicted_ms = self.calc_best.get(&(p.from_cid.saturating_sub(1))).copied();
            }
        }
    }

    fn step(&mut self, ev: Ev) -> Result<(), RunError> {
        let now = self.now_ms();
        match ev {
            Ev::Deliver { from, to, bytes } => {
                let msg = Message::decode(&bytes).map_err(|e| violation("wire-format", e.to_string()))?;
                match to {
                    Endpoint::Replica(r) => {
                        if self.crashed[r] {
                            return Ok(());
                        }
                        let actions = self.replicas[r].on_message(now, msg);
                        self.handle(r, actions)?;
                    }
                    Endpoint::Client(c) => {
                        if let (Endpoint::Replica(r), Body::ClientReply { seq, digest }) = (from, &msg.body) {
                            self.on_reply(c as usize, r, *seq, *digest);
                        }
                    }
                }
            }
            Ev::Tick(r) => {
                if !self.crashed[r] {
                    let actions = self.replicas[r].on_tick(now);
                    self.handle(r, actions)?;
                    self.sched
                        .schedule(self.sched.now().saturating_add(SimTime::from_ms(TICK_MS)), Ev::Tick(r));
                }
            }
            Ev::ClientSend(c) => self.client_send(c),
            Ev::Fault(idx) => self.apply_fault(idx),
            Ev::ViewChange(view) => self.view_change(view)?,
        }
        Ok(())
    }

    fn client_send(&mut self, c: usize) {
        let state = &mut self.clients[c];
        if state.limit.is_some_and(|l| state.sent >= l) || state.in_flight.is_some() {
            return;
        }
        state.sent += 1;
        let seq = state.sent;
        state.in_flight = Some((seq, self.sched.now().as_ms()));
        state.replies.clear();
        let msg = Message {
            view: 0,
            cid: 0,
            sender: c as u16,
            body: Body::ClientRequest(Request::client(c as ClientId, seq, seq.to_be_bytes().to_vec())),
        };
        for r in 0..self.res.shape.n() {
            self.transmit(Endpoint::Client(c as ClientId), Endpoint::Replica(r), &msg);
        }
    }

    fn on_reply(&mut self, c: usize, from: ReplicaId, seq: u64, digest: Digest) {
        let now = self.now_ms();
        let state = &mut self.clients[c];
        let quorum = state.reply_quorum;
        let Some((current, sent_at)) = state.in_flight else {
            return;
        };
        if seq != current || state.replies.iter().any(|&(r, _)| r == from) {
            return;
        }
        state.replies.push((from, digest));
        if state.replies.iter().filter(|&&(_, d)| d == digest).count() < quorum {
            return;
        }
        state.in_flight = None;
        state.done += 1;
        self.completed += 1;
        self.log.clients.push(ClientRecord {
            client: c,
            site: state.site,
            req_id: seq,
            send_ms: sent_at,
            latency_ms: now - sent_at,
        });
        let think = state.rng.next_f64() * THINK_TIME_MS;
        self.sched
            .schedule(self.sched.now().saturating_add(SimTime::from_ms(think)), Ev::ClientSend(c));
    }

    fn apply_fault(&mut self, idx: usize) {
        let fault = self.res.events[idx].1;
        let label = |r: ReplicaId| self.res.labels[r].clone();
        let detail = match fault {
            Fault::Crash(r) => {
                self.crashed[r] = true;
                format!("replica={} ({})", r, label(r))
            }
            Fault::AddDelay {
                replica,
                out_ms,
                jitter_ms,
            } => {
                self.links.set_override(replica, Some(DelayOverride { out_ms, jitter_ms }));
                format!("replica={} ({}) out_ms={out_ms} jitter_ms={jitter_ms}", replica, label(replica))
            }
            Fault::RemoveDelay(r) => {
                self.links.set_override(r, None);
                format!("replica={} ({})", r, label(r))
            }
            Fault::ZeroVectors(r) => {
                self.byzantine[r] = true;
                self.replicas[r].set_behavior(Behavior::ZeroVectors);
                format!("replica={} ({})", r, label(r))
            }
            Fault::Collusion(a, b) => {
                self.byzantine[a] = true;
                self.byzantine[b] = true;
                self.replicas[a].set_behavior(Behavior::Collude { partner: b });
                self.replicas[b].set_behavior(Behavior::Collude { partner: a });
                format!("replicas={a},{b}")
            }
            Fault::SilentConsensus(r) => {
                self.byzantine[r] = true;
                self.replicas[r].set_behavior(Behavior::SilentConsensus);
                format!("replica={} ({})", r, label(r))
            }
        };
        self.event(fault.kind(), detail);
    }

    fn handle(&mut self, r: ReplicaId, actions: Vec<Action>) -> Result<(), RunError> {
        for action in actions {
            match action {
                Action::Send { to, msg } => self.transmit(Endpoint::Replica(r), to, &msg),
                Action::Proposed { cid, time_ms, .. } => {
                    self.proposed_at.insert((r, cid), time_ms);
                }
                Action::Decided(d) => self.on_decided(r, d)?,
                Action::Calc(rec) => self.on_calc(r, *rec)?,
                Action::Reconfigured { from_cid, view } => {
                    if self.logged_reconfigs.insert(from_cid) {
                        self.event(
                            "reconfigure",
                            format!("from_cid={from_cid} view={} config={}", view.number, view.config),
                        );
                        let predicted = self.calc_best.get(&(from_cid - 1)).copied();
                        self.open_period(from_cid, view.config, predicted);
                    }
                }
                Action::SuspectLeader { view } => {
                    if self.correct(r) {
                        self.event("suspect", format!("replica={r} view={view}"));
                        self.sched.schedule(self.sched.now(), Ev::ViewChange(view));
                    }
                }
            }
        }
        Ok(())
    }

    fn open_period(&mut self, from_cid: Cid, config: WeightConfig, predicted: Option<f64>) {
        let now = self.now_ms();
        if let Some(last) = self.log.periods.last_mut() {
            last.to_ms = now;
        }
        self.log.periods.push(ConfigPeriod {
            from_ms: now,
            to_ms: f64::INFINITY,
            from_cid,
            config,
            predicted_ms: predicted,
        });
    }

    fn on_decided(&mut self, r: ReplicaId, d: Decision) -> Result<(), RunError> {
        let idx = (d.cid - 1) as usize;
        if idx == self.batches.len() {
            self.batches.push(d.batch.clone());
        }
        if self.correct(r) {
            if d.cid != self.last_cid[r] + 1 {
                return Err(violation(
                    "total-order",
                    format!("replica {r} decided cid {} after {}", d.cid, self.last_cid[r]),
                ));
            }
            self.last_cid[r] = d.cid;
            if idx == self.agreed.len() {
                self.agreed.push(d.digest);
            } else if self.agreed.get(idx) != Some(&d.digest) {
                return Err(violation(
                    "agreement",
                    format!("replica {r} decided a different batch for cid {}", d.cid),
                ));
            }
            if !d.accept_set.is_empty() {
                self.check_quorum(&d)?;
            }
        }
        if d.config.leader() == r && !d.accept_set.is_empty() {
            if let Some(t0) = self.proposed_at.remove(&(r, d.cid)) {
                self.log.instances.push(InstanceRecord {
                    cid: d.cid,
                    decide_time_ms: d.time_ms,
                    leader: r,
                    config: d.config.clone(),
                    latency_ms: d.time_ms - t0,
                    batch_size: d.batch.len(),
                });
            }
        }
        if !self.crashed[r] && d.cid > self.max_decided {
            self.max_decided = d.cid;
            while let Some(&(c, idx)) = self.cid_events.first() {
                if c > self.max_decided {
                    break;
                }
                self.cid_events.remove(0);
                self.apply_fault(idx);
            }
        }
        Ok(())
    }

    fn check_quorum(&mut self, d: &Decision) -> Result<(), RunError> {
        let shape = self.res.shape;
        let weight: Weight = d.accept_set.iter().map(|&s| d.config.weight_of(s)).sum();
        if weight < shape.q_v() {
            return Err(violation(
                "weighted-quorum",
                format!("cid {} decided with weight {} < {}", d.cid, weight.0, shape.q_v().0),
            ));
        }
        let mask = d.accept_set.iter().fold(0u64, |m, &s| m | 1 << s);
        let seen = self.quorum_masks.entry(d.config.to_string()).or_default();
        if seen.insert(mask) {
            for &other in seen.iter() {
                if ((other & mask).count_ones() as usize) < shape.f() + 1 {
                    return Err(violation(
                        "quorum-intersection",
                        format!("quorums {other:#b} and {mask:#b} share fewer than f+1 replicas"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn on_calc(&mut self, r: ReplicaId, rec: CalcRecord) -> Result<(), RunError> {
        if !self.correct(r) {
            return Ok(());
        }
        let print = calc_fingerprint(&rec);
        match self.calc_prints.get(&rec.cid) {
            Some(&(p, other)) if p != print => {
                return Err(violation(
                    "calc-agreement",
                    format!("replicas {other} and {r} computed different results at cid {}", rec.cid),
                ));
            }
            Some(_) => {}
            None => {
                self.calc_prints.insert(rec.cid, (print, r));
                self.calc_best.insert(rec.cid, rec.best.predicted);
                self.event(
                    "calc",
                    format!(
                        "cid={} current={} ({:.3} ms) best={} ({:.3} ms) ratio={:.4} reconfigure={}",
                        rec.cid,
                        rec.current.config,
                        rec.current.predicted,
                        rec.best.config,
                        rec.best.predicted,
                        rec.decision.ratio,
                        rec.decision.reconfigure
                    ),
                );
            }
        }
        self.log.calcs.push(CalcEntry {
            replica: r,
            time_ms: self.now_ms(),
            record: rec,
        });
        Ok(())
    }

    /// Simplified synchronous view change: lagging replicas adopt the
    /// decided prefix, then everyone moves to the next live leader.
    fn view_change(&mut self, suspected_view: u32) -> Result<(), RunError> {
        let live: Vec<ReplicaId> = (0..self.replicas.len()).filter(|&r| !self.crashed[r]).collect();
        let Some(&first) = live.first() else {
            return Ok(());
        };
        if live.iter().all(|&r| self.replicas[r].view().number != suspected_view) {
            return Ok(());
        }
        let target = live.iter().map(|&r| self.replicas[r].last_decided()).max().unwrap_or(0);
        let now = self.now_ms();
        for &r in &live {
            while self.replicas[r].last_decided() < target {
                let cid = self.replicas[r].last_decided() + 1;
                let batch = self.batches[(cid - 1) as usize].clone();
                let actions = self.replicas[r].catch_up(now, cid, &batch);
                self.handle(r, actions)?;
            }
        }
        let base = self.replicas[first].view().clone();
        if let Some(&r) = live.iter().find(|&&r| self.replicas[r].view() != &base) {
            return Err(violation(
                "view-agreement",
                format!("replicas {first} and {r} hold different views after catching up"),
            ));
        }
        let alive: Vec<bool> = (0..self.replicas.len())
            .map(|r| !self.crashed[r] && self.replicas[r].behavior() != Behavior::SilentConsensus)
            .collect();
        let next = base.after_timeout(&alive);
        self.event(
            "view_change",
            format!("view={} leader={} config={}", next.number, next.leader(), next.config),
        );
        self.open_period(target + 1, next.config.clone(), None);
        for &r in &live {
            let actions = self.replicas[r].install_view(now, next.clone());
            self.handle(r, actions)?;
        }
        Ok(())
    }
}

fn calc_fingerprint(rec: &CalcRecord) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&rec.cid.to_be_bytes());
    for m in [&rec.m_p, &rec.m_w] {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_bits().to_be_bytes());
        }
    }
    for c in [&rec.current, &rec.best] {
        bytes.extend_from_slice(c.config.to_string().as_bytes());
        bytes.extend_from_slice(&c.predicted.to_bits().to_be_bytes());
    }
    bytes.push(rec.decision.reconfigure as u8);
    fnv1a(&bytes)
}

/// Validates and runs a scenario.
pub fn run(scenario: &Scenario) -> Result<MetricsLog, RunError> {
    let res = scenario.resolve()?;
    Simulation::new(res).run()
}

/// Runs independent scenarios concurrently, one per worker thread.
pub fn run_many(scenarios: &[Scenario]) -> Vec<Result<MetricsLog, RunError>> {
    use rayon::prelude::*;
    scenarios.par_iter().map(run).collect()
}
