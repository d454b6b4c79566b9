use rayon::prelude::*;

use super::{ConfigCandidate, OptimizerError, SearchOutcome};
use crate::matrix::LatencyMatrix;
use crate::model::{ReplicaId, SystemShape};
use crate::predictor::Predictor;

/// Global argmin of predicted latency over every configuration whose leader
/// is a candidate.
///
/// Ties go to the first configuration in enumeration order, except that a
/// tied configuration keeping `current_leader` wins over ones that would
/// move the leader.
pub fn exhaustive_search(
    shape: &SystemShape,
    m_p: &LatencyMatrix,
    m_w: &LatencyMatrix,
    leader_candidates: &[ReplicaId],
    current_leader: Option<ReplicaId>,
    rounds: usize,
    budget: u128,
) -> Result<SearchOutcome, OptimizerError> {
    let count = shape.count_configurations();
    if count > budget {
        return Err(OptimizerError::BudgetExceeded { count, budget });
    }
    let configs = shape.enumerate_configurations(leader_candidates)?;
    let predictions: Vec<f64> = configs
        .par_iter()
        .map_init(Predictor::new, |p, c| p.predict(shape, c, m_p, m_w, rounds))
        .collect();

    let min = predictions.iter().copied().fold(f64::INFINITY, f64::min);
    let tied = |i: &usize| predictions[*i].to_bits() == min.to_bits();
    let pick = (0..configs.len())
        .filter(tied)
        .find(|&i| Some(configs[i].leader()) == current_leader)
        .or_else(|| (0..configs.len()).find(tied))
        .unwrap_or(0);

    Ok(SearchOutcome {
        best: ConfigCandidate {
            config: configs[pick].clone(),
            predicted: predictions[pick],
        },
        probes: configs.len(),
    })
}
