use crate::model::{ReplicaId, WeightConfig};
use crate::protocol::CalcRecord;
use crate::Cid;

/// One decided instance, timed at its leader.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub cid: Cid,
    pub decide_time_ms: f64,
    pub leader: ReplicaId,
    pub config: WeightConfig,
    /// Leader decision time minus its proposal time.
    pub latency_ms: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub client: usize,
    pub site: usize,
    pub req_id: u64,
    pub send_ms: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time_ms: f64,
    pub kind: String,
    pub detail: String,
}

/// A calculation point as computed by one correct replica.
#[derive(Debug, Clone, PartialEq)]
pub struct CalcEntry {
    pub replica: ReplicaId,
    pub time_ms: f64,
    pub record: CalcRecord,
}

/// A stretch of time during which one configuration was active.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigPeriod {
    pub from_ms: f64,
    pub to_ms: f64,
    pub from_cid: Cid,
    pub config: WeightConfig,
    /// Prediction for this configuration under the matrices of a
    /// calculation point during or right before the period.
    pub predicted_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub labels: Vec<String>,
    pub instances: Vec<InstanceRecord>,
    pub clients: Vec<ClientRecord>,
    pub events: Vec<EventRecord>,
    pub calcs: Vec<CalcEntry>,
    pub periods: Vec<ConfigPeriod>,
    pub end_ms: f64,
    pub messages: u64,
}

/// Mean over the 11th to 90th percentile: the lowest and highest `⌊N/10⌋`
/// samples are dropped. `NaN` for no samples.
pub fn trimmed_mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 10;
    let kept = &v[k..v.len() - k];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

impl MetricsLog {
    pub fn client_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.clients.iter().map(|c| c.client).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Latencies of `client`'s requests sent and completed within `[from_ms, to_ms)`.
    pub fn client_latencies(&self, client: usize, from_ms: f64, to_ms: f64) -> Vec<f64> {
        self.clients
            .iter()
            .filter(|c| c.client == client && c.send_ms >= from_ms && c.send_ms + c.latency_ms < to_ms)
            .map(|c| c.latency_ms)
            .collect()
    }

    /// Latencies of all requests sent and completed within `[from_ms, to_ms)`.
    pub fn all_latencies(&self, from_ms: f64, to_ms: f64) -> Vec<f64> {
        self.clients
            .iter()
            .filter(|c| c.send_ms >= from_ms && c.send_ms + c.latency_ms < to_ms)
            .map(|c| c.latency_ms)
            .collect()
    }

    pub fn events_of(&self, kind: &str) -> impl Iterator<Item = &EventRecord> {
        let kind = kind.to_string();
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Mean leader latency of instances decided within `[from_ms, to_ms)`.
    pub fn mean_instance_latency(&self, from_ms: f64, to_ms: f64) -> f64 {
        let v: Vec<f64> = self
            .instances
            .iter()
            .filter(|i| i.decide_time_ms >= from_ms && i.decide_time_ms < to_ms)
            .map(|i| i.latency_ms)
            .collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}
