use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use aware_core::simnet::{pearson, trimmed_mean, MetricsLog};

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".to_string()
    } else {
        "inf".to_string()
    }
}

fn instances_csv(log: &MetricsLog) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cid", "decide_time_ms", "leader", "config", "latency_ms"])?;
    for i in &log.instances {
        w.write_record([
            i.cid.to_string(),
            num(i.decide_time_ms),
            i.leader.to_string(),
            i.config.to_string(),
            num(i.latency_ms),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn clients_csv(log: &MetricsLog) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["client", "req_id", "latency_ms"])?;
    for c in &log.clients {
        w.write_record([c.client.to_string(), c.req_id.to_string(), num(c.latency_ms)])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn events_csv(log: &MetricsLog) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "kind", "detail"])?;
    for e in &log.events {
        w.write_record([num(e.time_ms), e.kind.clone(), e.detail.clone()])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Writes the three CSV files and `summary.txt` into `dir`.
pub fn write_all(dir: &Path, log: &MetricsLog, summary: &str) -> io::Result<()> {
    let files = [
        ("instances.csv", instances_csv(log)?),
        ("clients.csv", clients_csv(log)?),
        ("events.csv", events_csv(log)?),
    ];
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join("summary.txt"), summary)
}

fn ms(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.1}")
    }
}

pub fn summary(name: &str, seed: u64, log: &MetricsLog) -> String {
    let mut s = String::new();
    writeln!(s, "scenario: {name}").unwrap();
    writeln!(s, "seed: {seed}").unwrap();
    writeln!(s, "simulated_ms: {:.1}", log.end_ms).unwrap();
    writeln!(s, "instances_decided: {}", log.instances.last().map_or(0, |i| i.cid)).unwrap();
    writeln!(s, "requests_completed: {}", log.clients.len()).unwrap();
    writeln!(s, "messages: {}", log.messages).unwrap();

    let periods = &log.periods;
    writeln!(s, "\nconfiguration changes:").unwrap();
    if periods.len() < 2 {
        writeln!(s, "  none").unwrap();
    }
    for w in periods.windows(2) {
        writeln!(
            s,
            "  cid {} at {:.1} ms: {} -> {}",
            w[1].from_cid, w[1].from_ms, w[0].config, w[1].config
        )
        .unwrap();
    }

    writeln!(s, "\nregimes:").unwrap();
    writeln!(
        s,
        "  {:>3} {:>12} {:>12} {:>8}  {:<20} {:>12} {:>12} {:>12}",
        "#", "from_ms", "to_ms", "from_cid", "config", "predicted", "leader_mean", "client_tm"
    )
    .unwrap();
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    for (k, p) in periods.iter().enumerate() {
        let client_tm = trimmed_mean(&log.all_latencies(p.from_ms, p.to_ms));
        let leader = log.mean_instance_latency(p.from_ms, p.to_ms);
        writeln!(
            s,
            "  {:>3} {:>12.1} {:>12.1} {:>8}  {:<20} {:>12} {:>12} {:>12}",
            k + 1,
            p.from_ms,
            p.to_ms,
            p.from_cid,
            p.config.to_string(),
            p.predicted_ms.map_or("-".to_string(), ms),
            ms(leader),
            ms(client_tm)
        )
        .unwrap();
        if let Some(pred) = p.predicted_ms {
            if pred.is_finite() && client_tm.is_finite() {
                predicted.push(pred);
                measured.push(client_tm);
            }
        }
    }

    writeln!(s, "\nclient trimmed means (ms, 11th to 90th percentile):").unwrap();
    let header: String = (1..=periods.len()).map(|k| format!(" {:>9}", format!("regime{k}"))).collect();
    writeln!(s, "  {:>6} {:<12} {:>9}{header}", "client", "site", "overall").unwrap();
    for c in log.client_ids() {
        let site = log.clients.iter().find(|r| r.client == c).map_or(0, |r| r.site);
        let label = log.labels.get(site).cloned().unwrap_or_else(|| site.to_string());
        let overall = trimmed_mean(&log.client_latencies(c, 0.0, f64::INFINITY));
        let cols: String = periods
            .iter()
            .map(|p| format!(" {:>9}", ms(trimmed_mean(&log.client_latencies(c, p.from_ms, p.to_ms)))))
            .collect();
        writeln!(s, "  {:>6} {:<12} {:>9}{cols}", c, label, ms(overall)).unwrap();
    }

    if predicted.len() >= 3 {
        match pearson(&predicted, &measured) {
            Some(rho) => writeln!(s, "\nrho (predicted vs client trimmed mean, {} regimes): {rho:.4}", predicted.len()),
            None => writeln!(s, "\nrho: undefined (no variance)"),
        }
        .unwrap();
    } else {
        writeln!(s, "\nrho: omitted (fewer than 3 regimes with a prediction)").unwrap();
    }
    s
}
