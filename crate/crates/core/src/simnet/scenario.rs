//! Declarative simulation scripts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::link::Jitter;
use crate::matrix::LatencyMatrix;
use crate::model::{ModelError, ReplicaId, SystemShape, WeightConfig};
use crate::optimizer::{SaParams, Strategy, DEFAULT_ALPHA, DEFAULT_EXHAUSTIVE_BUDGET};
use crate::protocol::{AwareParams, DEFAULT_CALC_INTERVAL, DEFAULT_MAX_BATCH, DEFAULT_OMEGA, DEFAULT_REQUEST_TIMEOUT_MS};
use crate::monitoring::{DEFAULT_SYNC_PERIOD, DEFAULT_WINDOW};
use crate::predictor::DEFAULT_ROUNDS;
use crate::Cid;

const FIVE_SITES_JSON: &str = include_str!("../../../../fixtures/five_sites.json");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// A named latency matrix shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    #[serde(default)]
    pub note: String,
    pub labels: Vec<String>,
    pub matrix_ms: LatencyMatrix,
}

impl Fixture {
    pub fn builtin(name: &str) -> Option<Fixture> {
        match name.trim_end_matches(".json") {
            "five_sites" => Some(serde_json::from_str(FIVE_SITES_JSON).expect("bundled fixture parses")),
            _ => None,
        }
    }
}

/// The five-region matrix with labels Oregon, Ireland, Sydney, São Paulo, Virginia.
pub fn five_sites() -> Fixture {
    Fixture::builtin("five_sites").expect("five_sites is bundled")
}

/// A replica given by id or by region label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteRef {
    Id(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub f: usize,
    pub delta: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<SiteRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<Vec<SiteRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AwareSpec {
    pub enabled: bool,
    pub alpha: f64,
    pub calc_interval: u64,
    pub omega: f64,
    pub window: usize,
    pub sync_period: u64,
    pub strategy: Strategy,
    pub sa: SaParams,
    pub rounds: usize,
}

impl Default for AwareSpec {
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
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub attach: SiteRef,
    #[serde(default = "one")]
    pub count: usize,
    /// Requests per client; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<u64>,
    /// Matching replies a client waits for; the Byzantine majority `ceil((n + f + 1) / 2)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_quorum: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum At {
    /// When the first correct replica decides this instance.
    Cid(Cid),
    Ms(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSpec {
    Crash {
        replica: SiteRef,
    },
    AddDelay {
        replica: SiteRef,
        out_ms: f64,
        #[serde(default)]
        jitter_ms: f64,
    },
    RemoveDelay {
        replica: SiteRef,
    },
    ByzZeroVectors {
        replica: SiteRef,
    },
    ByzPairCollusion {
        replicas: [SiteRef; 2],
    },
    ByzSilentConsensus {
        replica: SiteRef,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub at: At,
    pub action: ActionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_requests: Option<u64>,
    pub seed: u64,
}

/// A simulation script as written in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_ms: Option<LatencyMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default)]
    pub jitter: Jitter,
    #[serde(default)]
    pub aware: AwareSpec,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub run: RunSpec,
}

/// A fault or network change with replica ids resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    Crash(ReplicaId),
    AddDelay {
        replica: ReplicaId,
        out_ms: f64,
        jitter_ms: f64,
    },
    RemoveDelay(ReplicaId),
    ZeroVectors(ReplicaId),
    Collusion(ReplicaId, ReplicaId),
    SilentConsensus(ReplicaId),
}

impl Fault {
    /// Replicas this fault makes faulty; delays do not count.
    pub fn faulty(&self) -> Vec<ReplicaId> {
        match *self {
            Fault::Crash(r) | Fault::ZeroVectors(r) | Fault::SilentConsensus(r) => vec![r],
            Fault::Collusion(a, b) => vec![a, b],
            Fault::AddDelay { .. } | Fault::RemoveDelay(_) => vec![],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Fault::Crash(_) => "crash",
            Fault::AddDelay { .. } => "add_delay",
            Fault::RemoveDelay(_) => "remove_delay",
            Fault::ZeroVectors(_) => "byz_zero_vectors",
            Fault::Collusion(..) => "byz_pair_collusion",
            Fault::SilentConsensus(_) => "byz_silent_consensus",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientGroup {
    pub site: usize,
    pub count: usize,
    pub requests: Option<u64>,
    pub reply_quorum: usize,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub shape: SystemShape,
    pub initial: WeightConfig,
    pub matrix: LatencyMatrix,
    pub labels: Vec<String>,
    pub jitter: Jitter,
    pub aware: AwareParams,
    pub max_batch: usize,
    pub request_timeout_ms: f64,
    pub clients: Vec<ClientGroup>,
    pub events: Vec<(At, Fault)>,
    pub horizon_ms: Option<f64>,
    pub total_requests: Option<u64>,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks every field and resolves labels, before anything runs.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let shape = SystemShape::derive(self.system.f, self.system.delta)?;
        let n = shape.n();
        let (matrix, labels) = match (&self.matrix_ms, &self.fixture) {
            (Some(m), None) => (m.clone(), (0..m.n()).map(|i| i.to_string()).collect()),
            (None, Some(name)) => {
                let fx = Fixture::builtin(name).ok_or_else(|| invalid(format!("unknown fixture {name:?}")))?;
                (fx.matrix_ms, fx.labels)
            }
            (Some(_), Some(_)) => return Err(invalid("give either matrix_ms or fixture, not both")),
            (None, None) => return Err(invalid("one of matrix_ms or fixture is required")),
        };
        if matrix.n() != n {
            return Err(invalid(format!("matrix is {}x{} but {shape} needs {n}x{n}", matrix.n(), matrix.n())));
        }
        matrix.validate().map_err(|e| invalid(e.to_string()))?;

        let site = |s: &SiteRef| -> Result<usize, ScenarioError> {
            match s {
                SiteRef::Id(i) if *i < n => Ok(*i),
                SiteRef::Id(i) => Err(invalid(format!("replica {i} out of range for n = {n}"))),
                SiteRef::Label(l) => labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| invalid(format!("unknown replica label {l:?}"))),
            }
        };

        let leader = self.system.leader.as_ref().map(&site).transpose()?.unwrap_or(0);
        let r_max = match &self.system.r_max {
            Some(list) => list.iter().map(&site).collect::<Result<Vec<_>, _>>()?,
            None => {
                let mut v: Vec<usize> = vec![leader];
                v.extend((0..n).filter(|&r| r != leader).take(shape.max_holders() - 1));
                v
            }
        };
        let initial = WeightConfig::new(&shape, leader, &r_max)?;

        let a = &self.aware;
        if !(a.alpha > 0.0 && a.alpha.is_finite()) {
            return Err(invalid("aware.alpha must be positive"));
        }
        if a.calc_interval == 0 {
            return Err(invalid("aware.calc_interval must be at least 1"));
        }
        if !(0.0..=1.0).contains(&a.omega) {
            return Err(invalid("aware.omega must lie in [0, 1]"));
        }
        if a.window == 0 || a.rounds == 0 {
            return Err(invalid("aware.window and aware.rounds must be at least 1"));
        }
        a.sa.validate().map_err(|e| invalid(e.to_string()))?;
        let aware = AwareParams {
            enabled: a.enabled,
            alpha: a.alpha,
            calc_interval: a.calc_interval,
            omega: a.omega,
            window: a.window,
            sync_period: a.sync_period,
            strategy: a.strategy,
            sa: a.sa,
            rounds: a.rounds,
            budget: DEFAULT_EXHAUSTIVE_BUDGET,
        };

        match self.jitter {
            Jitter::Uniform(j) | Jitter::Normal(j) if !(j >= 0.0 && j.is_finite()) => {
                return Err(invalid("jitter.param_ms must be a non-negative number"))
            }
            _ => {}
        }

        let clients = self
            .clients
            .iter()
            .map(|c| {
                if c.count == 0 {
                    return Err(invalid("clients.count must be at least 1"));
                }
                let reply_quorum = c.reply_quorum.unwrap_or((n + shape.f() + 2) / 2);
                if !(shape.f() + 1..=n - shape.f()).contains(&reply_quorum) {
                    return Err(invalid(format!(
                        "clients.reply_quorum must lie in [f + 1, n - f] = [{}, {}]",
                        shape.f() + 1,
                        n - shape.f()
                    )));
                }
                Ok(ClientGroup {
                    site: site(&c.attach)?,
                    count: c.count,
                    requests: c.requests,
                    reply_quorum,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if clients.iter().map(|c| c.count).sum::<usize>() > u16::MAX as usize {
            return Err(invalid("too many clients"));
        }

        let mut events = Vec::new();
        let mut faulty = BTreeSet::new();
        for e in &self.events {
            match e.at {
                At::Ms(t) if !(t >= 0.0 && t.is_finite()) => return Err(invalid("event time must be non-negative")),
                At::Cid(0) => return Err(invalid("event cid must be at least 1")),
                _ => {}
            }
            let fault = match &e.action {
                ActionSpec::Crash { replica } => Fault::Crash(site(replica)?),
                ActionSpec::AddDelay {
                    replica,
                    out_ms,
                    jitter_ms,
                } => {
                    if !(*out_ms >= 0.0 && out_ms.is_finite() && *jitter_ms >= 0.0 && jitter_ms.is_finite()) {
                        return Err(invalid("add_delay needs finite non-negative out_ms and jitter_ms"));
                    }
                    Fault::AddDelay {
                        replica: site(replica)?,
                        out_ms: *out_ms,
                        jitter_ms: *jitter_ms,
                    }
                }
                ActionSpec::RemoveDelay { replica } => Fault::RemoveDelay(site(replica)?),
                ActionSpec::ByzZeroVectors { replica } => Fault::ZeroVectors(site(replica)?),
                ActionSpec::ByzPairCollusion { replicas } => {
                    let (a, b) = (site(&replicas[0])?, site(&replicas[1])?);
                    if a == b {
                        return Err(invalid("byz_pair_collusion needs two distinct replicas"));
                    }
                    Fault::Collusion(a, b)
                }
                ActionSpec::ByzSilentConsensus { replica } => Fault::SilentConsensus(site(replica)?),
            };
            faulty.extend(fault.faulty());
            if faulty.len() > shape.f() {
                return Err(invalid(format!(
                    "events make {} replicas faulty but f = {}",
                    faulty.len(),
                    shape.f()
                )));
            }
            events.push((e.at, fault));
        }

        let r = &self.run;
        if r.horizon_ms.is_none() && r.total_requests.is_none() {
            return Err(invalid("run needs horizon_ms or total_requests"));
        }
        if let Some(h) = r.horizon_ms {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("run.horizon_ms must be positive"));
            }
        }
        if r.total_requests.is_some() && clients.is_empty() {
            return Err(invalid("run.total_requests needs at least one client"));
        }
        let request_timeout_ms = self.system.request_timeout_ms.unwrap_or(DEFAULT_REQUEST_TIMEOUT_MS);
        if !(request_timeout_ms > 0.0) {
            return Err(invalid("system.request_timeout_ms must be positive"));
        }

        Ok(Resolved {
            shape,
            initial,
            matrix,
            labels,
            jitter: self.jitter,
            aware,
            max_batch: self.system.max_batch.unwrap_or(DEFAULT_MAX_BATCH).max(1),
            request_timeout_ms,
            clients,
            events,
            horizon_ms: r.horizon_ms,
            total_requests: r.total_requests,
            seed: r.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {"f": 1, "delta": 1},
        "fixture": "five_sites",
        "run": {"horizon_ms": 1000, "seed": 1}
    }"#;

    #[test]
    fn minimal_scenario_resolves() {
        let r = Scenario::from_json(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(r.shape.n(), 5);
        assert_eq!(r.initial.to_string(), "0:0,1");
        assert_eq!(r.labels[3], "São Paulo");
        assert_eq!(r.aware.calc_interval, 500);
        assert_eq!(r.jitter, Jitter::None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"fixture\"", "\"fixtrue\": 1, \"fixture\"");
        assert!(matches!(Scenario::from_json(&bad), Err(ScenarioError::Json(_))));
        let bad = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"speed\": 2");
        assert!(Scenario::from_json(&bad).is_err());
        let bad = r#"{"system": {"f": 1, "delta": 1}, "fixture": "five_sites", "run": {"horizon_ms": 1, "seed": 1},
            "events": [{"at": {"cid": 5}, "action": {"kind": "crash", "replica": 1, "when": 3}}]}"#;
        assert!(Scenario::from_json(bad).is_err());
    }

    #[test]
    fn labels_and_events() {
        let text = r#"{
            "system": {"f": 1, "delta": 1, "leader": "Sydney", "r_max": ["Sydney", "São Paulo"]},
            "fixture": "five_sites",
            "clients": [{"attach": "Virginia", "count": 2, "requests": 5}],
            "events": [
                {"at": {"cid": 700}, "action": {"kind": "add_delay", "replica": "Ireland", "out_ms": 120, "jitter_ms": 20}},
                {"at": {"ms": 5000}, "action": {"kind": "crash", "replica": 0}}
            ],
            "run": {"total_requests": 10, "seed": 3}
        }"#;
        let r = Scenario::from_json(text).unwrap().resolve().unwrap();
        assert_eq!(r.initial.to_string(), "2:2,3");
        assert_eq!(r.clients, vec![ClientGroup { site: 4, count: 2, requests: Some(5), reply_quorum: 4 }]);
        assert_eq!(
            r.events[0],
            (
                At::Cid(700),
                Fault::AddDelay {
                    replica: 1,
                    out_ms: 120.0,
                    jitter_ms: 20.0
                }
            )
        );
        assert_eq!(r.events[1], (At::Ms(5000.0), Fault::Crash(0)));
    }

    #[test]
    fn f_bound_is_enforced() {
        let text = r#"{
            "system": {"f": 1, "delta": 1},
            "fixture": "five_sites",
            "events": [
                {"at": {"ms": 1}, "action": {"kind": "crash", "replica": 0}},
                {"at": {"ms": 2}, "action": {"kind": "byz_zero_vectors", "replica": 4}}
            ],
            "run": {"horizon_ms": 10, "seed": 1}
        }"#;
        let err = Scenario::from_json(text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("f = 1"), "{err}");
    }

    #[test]
    fn matrix_shape_must_match() {
        let text = r#"{"system": {"f": 2, "delta": 0}, "fixture": "five_sites", "run": {"horizon_ms": 10, "seed": 1}}"#;
        assert!(Scenario::from_json(text).unwrap().resolve().is_err());
        let text = r#"{"system": {"f": 1, "delta": 0}, "matrix_ms": [[0,1,1,1],[1,0,1,1],[1,1,0,"inf"],[1,1,1,0]],
            "run": {"horizon_ms": 10, "seed": 1}}"#;
        let r = Scenario::from_json(text).unwrap().resolve().unwrap();
        assert!(r.matrix[(2, 3)].is_infinite());
    }

    #[test]
    fn round_trips_through_json() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
