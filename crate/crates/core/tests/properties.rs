use aware_core::model::binomial;
use aware_core::monitoring::{median, sanitize};
use aware_core::optimizer::prng::parse_vector_line;
use aware_core::optimizer::SplitMix64;
use aware_core::predictor::predict_latency;
use aware_core::{LatencyMatrix, SystemShape, WeightConfig};
use proptest::prelude::*;

fn shape_strategy(max_n: usize) -> impl Strategy<Value = SystemShape> {
    (1usize..=3, 0usize..=4)
        .prop_map(|(f, d)| SystemShape::derive(f, d).unwrap())
        .prop_filter("n bound", move |s| s.n() <= max_n)
}

/// A configuration from a shuffled replica order.
fn config_from(shape: &SystemShape, order: &[usize]) -> WeightConfig {
    let holders = &order[..shape.max_holders()];
    WeightConfig::new(shape, holders[0], holders).unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.next_int(i + 1));
    }
    v
}

fn matrix(n: usize, cells: &[u16]) -> LatencyMatrix {
    let mut m = LatencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m[(i, j)] = f64::from(cells[(i * n + j) % cells.len()]);
            }
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_quorums_intersect_in_f_plus_one(shape in shape_strategy(11), seed: u64, a: u64, b: u64) {
        let n = shape.n();
        let config = config_from(&shape, &shuffled(n, seed));
        let subset = |mask: u64| (0..n).filter(|&i| mask >> i & 1 == 1).collect::<Vec<_>>();
        let (qa, qb) = (subset(a), subset(b));
        if shape.is_quorum(&config, &qa) && shape.is_quorum(&config, &qb) {
            let common = qa.iter().filter(|r| qb.contains(r)).count();
            prop_assert!(common > shape.f());
        }
    }

    #[test]
    fn quorum_size_bounds(shape in shape_strategy(11), seed: u64, mask: u64) {
        let n = shape.n();
        let config = config_from(&shape, &shuffled(n, seed));
        let set: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        if shape.is_quorum(&config, &set) {
            prop_assert!(set.len() > 2 * shape.f());
        }
        // any n - f replicas form a quorum, whatever their weights
        if set.len() >= n - shape.f() {
            prop_assert!(shape.is_quorum(&config, &set));
        }
    }

    #[test]
    fn count_matches_enumeration(shape in shape_strategy(10)) {
        let all = shape.enumerate_configurations(&shape.all_replicas()).unwrap();
        let n = shape.n() as u64;
        let two_f = 2 * shape.f() as u64;
        prop_assert_eq!(shape.count_configurations(), all.len() as u128);
        prop_assert_eq!(shape.count_configurations(), binomial(n, two_f) * u128::from(two_f));
    }

    #[test]
    fn lying_cannot_lower_correct_measurements(n in 4usize..9, cells in prop::collection::vec(1u16..400, 64), lies in prop::collection::vec(0u16..400, 8), liar_seed: u64) {
        let honest = matrix(n, &cells);
        let liar = shuffled(n, liar_seed)[0];
        let mut reported = honest.clone();
        for j in 0..n {
            if j != liar {
                reported[(liar, j)] = f64::from(lies[j % lies.len()]);
            }
        }
        let s = sanitize(&reported);
        for i in (0..n).filter(|&i| i != liar) {
            prop_assert!(s[(i, liar)] >= honest[(i, liar)]);
            prop_assert!(s[(liar, i)] >= honest[(i, liar)]);
        }
    }

    #[test]
    fn sanitize_is_symmetric_and_idempotent(n in 2usize..9, cells in prop::collection::vec(0u16..500, 64)) {
        let s = sanitize(&matrix(n, &cells));
        prop_assert!(s.is_symmetric());
        prop_assert_eq!(sanitize(&s), s);
    }

    #[test]
    fn median_ignores_sample_order(samples in prop::collection::vec(0.0f64..1000.0, 1..60), seed: u64) {
        let order = shuffled(samples.len(), seed);
        let permuted: Vec<f64> = order.iter().map(|&i| samples[i]).collect();
        prop_assert_eq!(median(samples.iter().copied()), median(permuted));
    }

    #[test]
    fn prediction_is_monotone_in_latencies(
        shape in shape_strategy(8), seed: u64,
        cells in prop::collection::vec(1u16..300, 64), bump in 1u16..200, at in 0usize..64,
    ) {
        let n = shape.n();
        let config = config_from(&shape, &shuffled(n, seed));
        let m = matrix(n, &cells);
        let mut bumped = cells.clone();
        bumped[at] += bump;
        let worse = matrix(n, &bumped);
        for rounds in [1, 40] {
            let before = predict_latency(&shape, &config, &m, &m, rounds);
            let after = predict_latency(&shape, &config, &worse, &worse, rounds);
            prop_assert!(after >= before - 1e-9 * before.abs(), "{} < {}", after, before);
        }
    }

    #[test]
    fn prediction_scales_with_latencies(shape in shape_strategy(8), seed: u64, cells in prop::collection::vec(1u16..300, 64), k in 1u32..5) {
        let n = shape.n();
        let config = config_from(&shape, &shuffled(n, seed));
        let m = matrix(n, &cells);
        let scale = f64::from(1u32 << k);
        let scaled = m.map(|v| v * scale);
        let a = predict_latency(&shape, &config, &m, &m, 100);
        let b = predict_latency(&shape, &config, &scaled, &scaled, 100);
        prop_assert!((b - scale * a).abs() <= 1e-9 * b.max(1.0));
    }

    #[test]
    fn prediction_ignores_replica_labels(shape in shape_strategy(8), seed: u64, perm_seed: u64, cells in prop::collection::vec(1u16..300, 64)) {
        let n = shape.n();
        let config = config_from(&shape, &shuffled(n, seed));
        let perm = shuffled(n, perm_seed);
        let m = matrix(n, &cells);
        let pm = m.permuted(&perm);
        let holders: Vec<usize> = config.r_max().iter().map(|&r| perm[r]).collect();
        let pc = WeightConfig::new(&shape, perm[config.leader()], &holders).unwrap();
        let a = predict_latency(&shape, &config, &m, &m, 100);
        let b = predict_latency(&shape, &pc, &pm, &pm, 100);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}

#[test]
fn splitmix_matches_reference_vectors() {
    let text = include_str!("../../../fixtures/prng_vectors.txt");
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (seed, expected) = parse_vector_line(line).expect("well-formed vector line");
        let mut rng = SplitMix64::new(seed);
        let got: Vec<u64> = expected.iter().map(|_| rng.next_u64()).collect();
        assert_eq!(got, expected, "seed {seed:#x}");
        checked += 1;
    }
    assert_eq!(checked, 7);
}
