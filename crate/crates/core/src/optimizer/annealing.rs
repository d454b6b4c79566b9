use serde::{Deserialize, Serialize};

use super::{ConfigCandidate, OptimizerError, SearchOutcome, SplitMix64};
use crate::matrix::LatencyMatrix;
use crate::model::{SystemShape, WeightConfig};
use crate::predictor::Predictor;

/// Cooling schedule: start temperature, multiplicative cooling rate and the
/// temperature at which the search stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaParams {
    pub t0: f64,
    pub theta: f64,
    pub threshold: f64,
}

impl Default for SaParams {
    fn default() -> Self {
        Self {
            t0: 120.0,
            theta: 0.0055,
            threshold: 0.2,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.threshold > 0.0) {
            return Err(OptimizerError::InvalidParams("threshold must be positive"));
        }
        if !(self.t0 > self.threshold) {
            return Err(OptimizerError::InvalidParams("t0 must exceed threshold"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(OptimizerError::InvalidParams("theta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Closed-form number of neighbor evaluations, `⌈ln(threshold/t0) / ln(1−θ)⌉`.
    pub fn expected_probes(&self) -> usize {
        ((self.threshold / self.t0).ln() / (1.0 - self.theta).ln()).ceil() as usize
    }
}

/// One neighbor evaluation, for tracing the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SaStep {
    pub candidate: ConfigCandidate,
    pub accepted: bool,
    pub best_so_far: f64,
    pub temperature: f64,
}

/// Seeded simulated annealing over `V_max` swaps, starting from `current`.
///
/// Each step moves `V_max` from a uniformly chosen holder to a uniformly
/// chosen `V_min` replica (both lists in ascending id order); if the leader
/// gave up its weight, the receiving replica becomes leader. Better
/// neighbors are always taken, worse ones with probability
/// `exp(−Δ/temperature)`. Returns the best configuration seen.
pub fn simulated_annealing(
    shape: &SystemShape,
    m_p: &LatencyMatrix,
    m_w: &LatencyMatrix,
    current: &WeightConfig,
    seed: u64,
    params: &SaParams,
    rounds: usize,
) -> Result<SearchOutcome, OptimizerError> {
    simulated_annealing_traced(shape, m_p, m_w, current, seed, params, rounds, |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn simulated_annealing_traced(
    shape: &SystemShape,
    m_p: &LatencyMatrix,
    m_w: &LatencyMatrix,
    current: &WeightConfig,
    seed: u64,
    params: &SaParams,
    rounds: usize,
    mut trace: impl FnMut(&SaStep),
) -> Result<SearchOutcome, OptimizerError> {
    params.validate()?;
    let mut predictor = Predictor::new();
    let u = shape.max_holders();
    let n = shape.n();

    let mut cur = ConfigCandidate {
        config: current.clone(),
        predicted: predictor.predict(shape, current, m_p, m_w, rounds),
    };
    let mut best = cur.clone();
    let mut temp = params.t0;
    let mut rng = SplitMix64::new(seed);
    let mut probes = 0;

    while temp > params.threshold {
        let from = cur.config.r_max()[rng.next_int(u)];
        let to = cur.config.r_min()[rng.next_int(n - u)];
        let config = cur.config.swap(from, to);
        let predicted = predictor.predict(shape, &config, m_p, m_w, rounds);
        let neighbor = ConfigCandidate { config, predicted };
        probes += 1;

        let accepted = if neighbor.predicted < cur.predicted {
            true
        } else {
            let draw = rng.next_f64();
            (-(neighbor.predicted - cur.predicted) / temp).exp() > draw
        };
        if neighbor.predicted < best.predicted {
            best = neighbor.clone();
        }
        trace(&SaStep {
            candidate: neighbor.clone(),
            accepted,
            best_so_far: best.predicted,
            temperature: temp,
        });
        if accepted {
            cur = neighbor;
        }
        temp *= 1.0 - params.theta;
    }

    Ok(SearchOutcome { best, probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> LatencyMatrix {
        let mut rng = SplitMix64::new(seed);
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

    #[test]
    fn default_schedule_probes_1160() {
        let p = SaParams::default();
        assert_eq!(p.expected_probes(), 1160);
        let s = SystemShape::derive(2, 1).unwrap();
        let m = random_matrix(s.n(), 1);
        let start = WeightConfig::new(&s, 0, &[0, 1, 2, 3]).unwrap();
        let out = simulated_annealing(&s, &m, &m, &start, 500, &p, 50).unwrap();
        assert_eq!(out.probes, 1160);
    }

    #[test]
    fn deterministic_for_same_seed() {
        let s = SystemShape::derive(3, 2).unwrap();
        let m = random_matrix(s.n(), 9);
        let start = WeightConfig::new(&s, 5, &[0, 1, 2, 3, 4, 5]).unwrap();
        let a = simulated_annealing(&s, &m, &m, &start, 1500, &SaParams::default(), 100).unwrap();
        let b = simulated_annealing(&s, &m, &m, &start, 1500, &SaParams::default(), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_respects_invariants() {
        let s = SystemShape::derive(2, 2).unwrap();
        let m = random_matrix(s.n(), 3);
        let start = WeightConfig::new(&s, 8, &[5, 6, 7, 8]).unwrap();
        let mut last_best = f64::INFINITY;
        let out = simulated_annealing_traced(&s, &m, &m, &start, 7, &SaParams::default(), 100, |step| {
            let c = &step.candidate.config;
            assert_eq!(c.r_max().len(), 4);
            assert!(c.holds_max(c.leader()));
            assert!(step.best_so_far <= last_best);
            last_best = step.best_so_far;
        })
        .unwrap();
        assert_eq!(out.best.predicted, last_best.min(out.best.predicted));
    }

    #[test]
    fn rejects_bad_params() {
        let bad = SaParams {
            t0: 0.1,
            theta: 0.5,
            threshold: 0.2,
        };
        assert!(bad.validate().is_err());
        assert!(SaParams { theta: 1.0, ..SaParams::default() }.validate().is_err());
    }
}
