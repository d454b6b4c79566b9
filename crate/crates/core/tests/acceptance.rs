//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p aware-core --test acceptance`. The process exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use aware_core::monitoring::{sanitize, ProbeKind};
use aware_core::optimizer::{exhaustive_search, simulated_annealing, SaParams, SplitMix64, DEFAULT_EXHAUSTIVE_BUDGET};
use aware_core::predictor::{predict_latency, DEFAULT_ROUNDS};
use aware_core::simnet::{self, oracle_mean_leader_latency, trimmed_mean, Fixture, MetricsLog, Scenario};
use aware_core::{LatencyMatrix, SystemShape, WeightConfig};
use rayon::prelude::*;

const FIVE_SITES_RAW: &str = include_str!("../../../fixtures/five_sites_raw.json");
const RUNTIME_BEHAVIOR: &str = include_str!("../../../scenarios/runtime_behavior.json");
const SCENARIOS: [(&str, &str); 6] = [
    ("runtime_behavior", include_str!("../../../scenarios/runtime_behavior.json")),
    ("five_sites_optimize", include_str!("../../../scenarios/five_sites_optimize.json")),
    ("byz_zero_vectors", include_str!("../../../scenarios/byz_zero_vectors.json")),
    ("crash_replica", include_str!("../../../scenarios/crash_replica.json")),
    ("silent_consensus", include_str!("../../../scenarios/silent_consensus.json")),
    ("pair_collusion", include_str!("../../../scenarios/pair_collusion.json")),
];

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("sanitization golden matrix", c1_sanitize_golden),
        ("configuration counting", c2_counting),
        ("annealing probe count", c3_sa_probes),
        ("annealing approximation quality", c4_sa_quality),
        ("predictor matches event oracle", c5_predictor_oracle),
        ("deterministic reconfiguration", c6_determinism),
        ("runtime behavior, nine events", c7_runtime_behavior),
        ("weighted quorum intersection", c8_quorum_intersection),
        ("Byzantine lying bound", c9_lying_bound),
        ("safety under faults", c10_safety),
    ];
    let only: Option<usize> = std::env::var("AWARE_CRITERION").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(n: usize, rng: &mut SplitMix64) -> LatencyMatrix {
    let mut m = LatencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            let v = (20 + rng.next_int(281)) as f64;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn random_config(shape: &SystemShape, rng: &mut SplitMix64) -> WeightConfig {
    let n = shape.n();
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.next_int(i + 1));
    }
    let holders = &ids[..shape.max_holders()];
    WeightConfig::new(shape, holders[rng.next_int(holders.len())], holders).unwrap()
}

/// Every `(leader, V_max set)` pair, by brute force over bitmasks.
fn brute_force_configs(shape: &SystemShape) -> Vec<WeightConfig> {
    let n = shape.n();
    let k = shape.max_holders() as u32;
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != k {
            continue;
        }
        let holders: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        for &leader in &holders {
            out.push(WeightConfig::new(shape, leader, &holders).unwrap());
        }
    }
    out
}

fn brute_force_optimum(shape: &SystemShape, m_p: &LatencyMatrix, m_w: &LatencyMatrix) -> f64 {
    brute_force_configs(shape)
        .iter()
        .map(|c| predict_latency(shape, c, m_p, m_w, DEFAULT_ROUNDS))
        .fold(f64::INFINITY, f64::min)
}

fn c1_sanitize_golden() -> Outcome {
    let before: Fixture = serde_json::from_str(FIVE_SITES_RAW).unwrap();
    let after = simnet::five_sites();
    let got = sanitize(&before.matrix_ms);
    let mut equal = 0;
    for i in 0..5 {
        for j in 0..5 {
            if got[(i, j)].to_bits() == after.matrix_ms[(i, j)].to_bits() {
                equal += 1;
            }
        }
    }
    ensure(equal == 25, || format!("{equal}/25 entries match"))?;
    let reps = 1000;
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(sanitize(std::hint::black_box(&before.matrix_ms)));
    }
    let per_call = start.elapsed() / reps;
    ensure(per_call < Duration::from_millis(1), || format!("{per_call:?} per call"))?;
    Ok(format!("25/25 entries bit-exact, {per_call:?} per call"))
}

fn c2_counting() -> Outcome {
    let count = |f, d| SystemShape::derive(f, d).unwrap().count_configurations();
    ensure(count(1, 1) == 20, || format!("(1,1) gave {}", count(1, 1)))?;
    ensure(count(2, 2) == 504, || format!("(2,2) gave {}", count(2, 2)))?;
    let mut shapes = 0;
    for f in 1..=4 {
        for d in 0..=12 {
            let shape = SystemShape::derive(f, d).unwrap();
            if shape.n() > 13 {
                break;
            }
            let brute = brute_force_configs(&shape).len() as u128;
            let listed = shape.enumerate_configurations(&shape.all_replicas()).unwrap();
            ensure(shape.count_configurations() == brute, || {
                format!("{shape}: count {} vs brute force {brute}", shape.count_configurations())
            })?;
            ensure(listed.len() as u128 == brute, || format!("{shape}: enumeration has {} entries", listed.len()))?;
            let mut sorted: Vec<String> = listed.iter().map(|c| c.to_string()).collect();
            sorted.sort();
            sorted.dedup();
            ensure(sorted.len() == listed.len(), || format!("{shape}: duplicate configurations"))?;
            shapes += 1;
        }
    }
    Ok(format!("(1,1)=20, (2,2)=504, {shapes} shapes with n <= 13 match brute force"))
}

fn shape_with_n(n: usize) -> SystemShape {
    let f = (n - 1) / 3;
    SystemShape::derive(f, n - 1 - 3 * f).unwrap()
}

fn c3_sa_probes() -> Outcome {
    let params = SaParams::default();
    // steps until t0·(1−θ)^k ≤ threshold
    let mut temp = params.t0;
    let mut expected = 0;
    while temp > params.threshold {
        temp *= 1.0 - params.theta;
        expected += 1;
    }
    ensure(expected == 1160, || format!("cooling schedule gives {expected} steps"))?;
    let start = Instant::now();
    for n in 8..=17 {
        let shape = shape_with_n(n);
        let mut rng = SplitMix64::new(n as u64);
        let m = random_matrix(n, &mut rng);
        let current = random_config(&shape, &mut rng);
        let out = simulated_annealing(&shape, &m, &m, &current, n as u64, &params, DEFAULT_ROUNDS).unwrap();
        ensure(out.probes == expected, || format!("n={n}: {} probes", out.probes))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("1160 probes for every n in 8..=17 in {took:.2?}"))
}

fn c4_sa_quality() -> Outcome {
    let trials = 1000u64;
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (f, d) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)] {
        let shape = SystemShape::derive(f, d).unwrap();
        let n = shape.n();
        let ratios: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let seed = (n as u64) << 32 | t;
                let mut rng = SplitMix64::new(seed);
                let m = random_matrix(n, &mut rng);
                let current = random_config(&shape, &mut rng);
                let ex = exhaustive_search(&shape, &m, &m, &shape.all_replicas(), None, DEFAULT_ROUNDS, DEFAULT_EXHAUSTIVE_BUDGET)
                    .unwrap();
                let sa = simulated_annealing(&shape, &m, &m, &current, seed, &SaParams::default(), DEFAULT_ROUNDS).unwrap();
                sa.best.predicted / ex.best.predicted
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        worst = worst.max(mean);
        parts.push(format!("n={n}:{mean:.4}"));
        ensure(ratios.iter().all(|&r| r >= 1.0 - 1e-12), || format!("n={n}: annealing beat the exhaustive optimum"))?;
        ensure(mean <= 1.03, || format!("n={n}: mean ratio {mean:.4} > 1.03"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(600), || format!("took {took:?}"))?;
    Ok(format!("mean SA/optimum {} (max {worst:.4} <= 1.03)", parts.join(" ")))
}

fn c5_predictor_oracle() -> Outcome {
    let shapes = [(1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (2, 0), (2, 1)];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (f, d) in shapes {
        let shape = SystemShape::derive(f, d).unwrap();
        let n = shape.n();
        let errors: Vec<Result<f64, String>> = (0..200u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = SplitMix64::new(0xC5 << 40 | (n as u64) << 32 | (f as u64) << 24 | t);
                let m_p = random_matrix(n, &mut rng);
                let m_w = random_matrix(n, &mut rng);
                let config = random_config(&shape, &mut rng);
                let predicted = predict_latency(&shape, &config, &m_p, &m_w, 1000);
                let oracle = oracle_mean_leader_latency(&shape, &config, &m_p, &m_w, 1000);
                let rel = (predicted - oracle).abs() / oracle;
                if rel <= 1e-3 {
                    Ok(rel)
                } else {
                    Err(format!("{shape} {config}: predicted {predicted} vs oracle {oracle}"))
                }
            })
            .collect();
        for e in errors {
            worst = worst.max(e?);
            checked += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(900), || format!("took {took:?}"))?;
    Ok(format!("{checked} matrices over 7 shapes, max relative error {worst:.2e}"))
}

fn calc_points(log: &MetricsLog) -> std::collections::BTreeMap<u64, Vec<&simnet::CalcEntry>> {
    let mut by_cid = std::collections::BTreeMap::new();
    for c in &log.calcs {
        by_cid.entry(c.record.cid).or_insert_with(Vec::new).push(c);
    }
    by_cid
}

fn c6_determinism() -> Outcome {
    let mut points = 0;
    let mut reconfigs = 0;
    for seed in 0..10u64 {
        let mut s = Scenario::from_json(SCENARIOS[1].1).unwrap();
        s.run.seed = seed;
        s.jitter = simnet::Jitter::Uniform(2.0);
        let log = simnet::run(&s).map_err(|e| format!("seed {seed}: {e}"))?;
        for (cid, entries) in calc_points(&log) {
            ensure(entries.len() == 5, || format!("seed {seed} cid {cid}: {} replicas computed", entries.len()))?;
            let first = &entries[0].record;
            for e in &entries[1..] {
                ensure(e.record == *first, || {
                    format!("seed {seed} cid {cid}: replicas {} and {} disagree", entries[0].replica, e.replica)
                })?;
            }
            let optimum = brute_force_optimum(&SystemShape::derive(1, 1).unwrap(), &first.m_p, &first.m_w);
            ensure(first.best.predicted == optimum, || {
                format!("seed {seed} cid {cid}: best {} vs optimum {optimum}", first.best.predicted)
            })?;
            if let Some(new) = &first.decision.new_config {
                ensure(*new == first.best.config, || format!("seed {seed} cid {cid}: chose a non-optimal config"))?;
                reconfigs += 1;
            }
            points += 1;
        }
    }
    ensure(reconfigs >= 10, || format!("only {reconfigs} reconfigurations over 10 seeds"))?;
    Ok(format!(
        "{points} calculation points over 10 seeds agree on all 5 replicas; {reconfigs} reconfigurations, all to the exhaustive optimum"
    ))
}

fn event_time(log: &MetricsLog, kind: &str, needle: &str) -> Result<f64, String> {
    log.events
        .iter()
        .find(|e| e.kind == kind && e.detail.contains(needle))
        .map(|e| e.time_ms)
        .ok_or_else(|| format!("no {kind} event matching {needle:?}"))
}

fn c7_runtime_behavior() -> Outcome {
    let scenario = Scenario::from_json(RUNTIME_BEHAVIOR).unwrap();
    let start = Instant::now();
    let log = simnet::run(&scenario).map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    ensure(wall < Duration::from_secs(60), || format!("took {wall:?}"))?;

    // event ②: first optimization leaves the bad start config for the optimum
    let t2 = event_time(&log, "reconfigure", "from_cid=501 ")?;
    let calc500 = &calc_points(&log)[&500][0].record;
    ensure(calc500.current.config.to_string() == "2:2,3", || "unexpected start config".into())?;
    let opt = brute_force_optimum(&SystemShape::derive(1, 1).unwrap(), &calc500.m_p, &calc500.m_w);
    ensure(calc500.best.predicted == opt, || "cid 500 choice is not optimal".into())?;
    let t3 = event_time(&log, "add_delay", "Ireland")?;
    // event ④: V_max moves away from Ireland
    let t4 = event_time(&log, "reconfigure", "from_cid=1001 ")?;
    let c4 = &calc_points(&log)[&1000][0].record;
    ensure(!c4.best.config.holds_max(1), || format!("cid 1000 kept Ireland in V_max: {}", c4.best.config))?;
    let t5 = event_time(&log, "remove_delay", "Ireland")?;
    // event ⑥: Ireland gets V_max back
    let t6 = event_time(&log, "reconfigure", "from_cid=1501 ")?;
    let c6 = &calc_points(&log)[&1500][0].record;
    ensure(c6.best.config.holds_max(1), || format!("cid 1500 did not return V_max to Ireland: {}", c6.best.config))?;
    let t7 = event_time(&log, "crash", "Oregon")?;
    // event ⑧: view change onto the fallback quorum
    let t8 = event_time(&log, "view_change", "")?;
    // event ⑨: weights redistributed away from the crashed replica
    let t9 = event_time(&log, "reconfigure", "from_cid=2501 ")?;
    let c9 = &calc_points(&log)[&2500][0].record;
    ensure(!c9.best.config.holds_max(0), || format!("cid 2500 kept V_max on the crashed leader: {}", c9.best.config))?;
    let times = [0.0, t2, t3, t4, t5, t6, t7, t8, t9, log.end_ms];
    ensure(times.windows(2).all(|w| w[0] < w[1]), || format!("events out of order: {times:?}"))?;

    let regime = |k: usize| (times[k - 1], times[k]);
    // (label, earlier regime, later regime, later must be lower)
    let comparisons = [("②<①", 1, 2, true), ("④<③", 3, 4, true), ("⑥<⑤", 5, 6, true), ("⑧>⑥", 6, 8, false), ("⑨<⑧", 8, 9, true)];
    let mut summary = Vec::new();
    for (label, before, after, lower) in comparisons {
        for c in log.client_ids() {
            let (a0, a1) = regime(before);
            let (b0, b1) = regime(after);
            let x = trimmed_mean(&log.client_latencies(c, a0, a1));
            let y = trimmed_mean(&log.client_latencies(c, b0, b1));
            let ok = if lower { y < x } else { y > x };
            ensure(ok, || format!("{label} fails for client {c}: {x:.1} -> {y:.1} ms"))?;
        }
        let (a0, a1) = regime(before);
        let (b0, b1) = regime(after);
        summary.push(format!(
            "{label} {:.0}->{:.0}",
            trimmed_mean(&log.all_latencies(a0, a1)),
            trimmed_mean(&log.all_latencies(b0, b1))
        ));
    }
    Ok(format!("all 5 clients: {} ms; {:.0} s simulated in {wall:.2?}", summary.join(", "), log.end_ms / 1000.0))
}

fn c8_quorum_intersection() -> Outcome {
    let start = Instant::now();
    let mut shapes = 0;
    let mut pairs: u64 = 0;
    for f in 1..=3usize {
        for d in 0..=9usize {
            let shape = SystemShape::derive(f, d).unwrap();
            let n = shape.n();
            if n > 10 {
                break;
            }
            // weights scaled by f: V_min = f, V_max = f + Δ, Q_v = f·(2(f+Δ)+1)
            let (v_min, v_max, q_v) = (f as u64, (f + d) as u64, (f * (2 * (f + d) + 1)) as u64);
            for holders in 0u32..(1 << n) {
                if holders.count_ones() as usize != 2 * f {
                    continue;
                }
                let weight = |mask: u32| -> u64 {
                    (0..n)
                        .filter(|&i| mask >> i & 1 == 1)
                        .map(|i| if holders >> i & 1 == 1 { v_max } else { v_min })
                        .sum()
                };
                let quorums: Vec<u32> = (0u32..(1 << n)).filter(|&m| weight(m) >= q_v).collect();
                let leader = holders.trailing_zeros() as usize;
                let ids: Vec<usize> = (0..n).filter(|&i| holders >> i & 1 == 1).collect();
                let config = WeightConfig::new(&shape, leader, &ids).unwrap();
                for &q in &quorums {
                    let members: Vec<usize> = (0..n).filter(|&i| q >> i & 1 == 1).collect();
                    ensure(shape.is_quorum(&config, &members), || format!("{shape}: library rejects quorum {q:#b}"))?;
                }
                ensure(quorums.len() as u64 == (0u32..(1 << n)).filter(|&m| {
                    let members: Vec<usize> = (0..n).filter(|&i| m >> i & 1 == 1).collect();
                    shape.is_quorum(&config, &members)
                }).count() as u64, || format!("{shape}: library accepts a non-quorum"))?;
                for (i, &a) in quorums.iter().enumerate() {
                    for &b in &quorums[i..] {
                        pairs += 1;
                        if ((a & b).count_ones() as usize) < f + 1 {
                            return Err(format!("{shape}: {a:#b} and {b:#b} share {} replicas", (a & b).count_ones()));
                        }
                    }
                }
            }
            shapes += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("{shapes} shapes, every V_max set, {pairs} quorum pairs intersect in >= f+1 ({took:.2?})"))
}

fn c9_lying_bound() -> Outcome {
    let mut s = Scenario::from_json(SCENARIOS[2].1).unwrap();
    s.jitter = simnet::Jitter::None;
    let byz = 4;
    let sim = simnet::Simulation::new(s.resolve().map_err(|e| e.to_string())?);
    let (log, replicas) = sim.run_with_replicas().map_err(|e| e.to_string())?;
    let truth = simnet::five_sites().matrix_ms;
    for r in replicas.iter().filter(|r| r.id() != byz) {
        let raw = &r.matrices().write;
        ensure(raw.row(byz).iter().all(|&v| v == 0.0), || format!("replica {}: liar's row is not all zero", r.id()))?;
        let (_, m_w) = r.matrices().sanitized();
        for i in (0..5).filter(|&i| i != byz) {
            let own = r.monitor().window(ProbeKind::Write, byz).median();
            ensure(m_w[(i, byz)] == raw[(i, byz)] && m_w[(byz, i)] == raw[(i, byz)], || {
                format!("replica {}: sanitized ({i},{byz}) = {} but {i} measured {}", r.id(), m_w[(i, byz)], raw[(i, byz)])
            })?;
            ensure(m_w[(i, byz)] == truth[(i, byz)], || format!("entry ({i},{byz}) = {}", m_w[(i, byz)]))?;
            if i == r.id() {
                ensure(own == raw[(i, byz)], || format!("replica {i}: decided {} vs own median {own}", raw[(i, byz)]))?;
            }
        }
    }
    let mut points = 0;
    for c in log.calcs.iter().filter(|c| c.replica != byz) {
        for i in (0..5).filter(|&i| i != byz) {
            ensure(c.record.m_w[(i, byz)] == truth[(i, byz)], || {
                format!("cid {}: sanitized ({i},{byz}) = {}", c.record.cid, c.record.m_w[(i, byz)])
            })?;
        }
        points += 1;
    }
    ensure(points > 0, || "no calculation points".into())?;
    Ok(format!(
        "row/col 4 sanitized to the correct peers' medians (40, 35, 99, 70) at all 4 correct replicas and {points} calculation records"
    ))
}

fn fault_sweep() -> Vec<(String, Scenario)> {
    let mut out = Vec::new();
    let kinds = ["crash", "byz_zero_vectors", "byz_silent_consensus", "add_delay"];
    for seed in 0..24u64 {
        let mut rng = SplitMix64::new(0xA11CE ^ seed);
        let kind = kinds[seed as usize % kinds.len()];
        let replica = rng.next_int(5);
        let at = 2000 + rng.next_int(20_000);
        let action = match kind {
            "add_delay" => format!(r#"{{"kind": "add_delay", "replica": {replica}, "out_ms": 150, "jitter_ms": 30}}"#),
            k => format!(r#"{{"kind": "{k}", "replica": {replica}}}"#),
        };
        let text = format!(
            r#"{{
                "system": {{"f": 1, "delta": 1, "leader": {leader}, "request_timeout_ms": 1500}},
                "fixture": "five_sites",
                "jitter": {{"kind": "normal", "param_ms": 8}},
                "aware": {{"calc_interval": 60}},
                "clients": [{{"attach": 0, "count": 3}}, {{"attach": 3, "count": 3}}],
                "events": [{{"at": {{"ms": {at}}}, "action": {action}}}],
                "run": {{"horizon_ms": 60000, "seed": {seed}}}
            }}"#,
            leader = rng.next_int(5)
        );
        out.push((format!("sweep {kind} r{replica} seed {seed}"), Scenario::from_json(&text).unwrap()));
    }
    for seed in 0..6u64 {
        let mut s = Scenario::from_json(SCENARIOS[5].1).unwrap();
        s.run.seed = seed;
        s.run.horizon_ms = Some(60_000.0);
        s.jitter = simnet::Jitter::Normal(5.0);
        s.aware.calc_interval = 50;
        out.push((format!("collusion seed {seed}"), s));
    }
    out
}

fn c10_safety() -> Outcome {
    let mut runs: Vec<(String, Scenario)> = SCENARIOS
        .iter()
        .map(|(name, text)| (name.to_string(), Scenario::from_json(text).unwrap()))
        .collect();
    runs.extend(fault_sweep());
    let scenarios: Vec<Scenario> = runs.iter().map(|(_, s)| s.clone()).collect();
    let results = simnet::run_many(&scenarios);
    let mut decided = 0;
    for ((name, _), result) in runs.iter().zip(results) {
        let log = result.map_err(|e| format!("{name}: {e}"))?;
        ensure(!log.instances.is_empty(), || format!("{name}: nothing decided"))?;
        decided += log.instances.len();
    }
    Ok(format!(
        "{} fault runs ({decided} leader decisions) with continuous agreement, total-order and quorum checks: no violation",
        runs.len()
    ))
}
