use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::matrix::LatencyMatrix;
use crate::model::ReplicaId;
use crate::optimizer::SplitMix64;

/// Per-message random latency added on top of the base matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param_ms", rename_all = "lowercase")]
pub enum Jitter {
    #[default]
    None,
    /// Uniform in `[0, param)`.
    Uniform(f64),
    /// Normal with mean 0 and the given standard deviation; the total
    /// latency is truncated at 0.
    Normal(f64),
}

/// Extra egress delay of one replica, e.g. an injected WAN slowdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayOverride {
    pub out_ms: f64,
    pub jitter_ms: f64,
}

/// Latency between simulated sites. Sites `0..n` are the replicas' regions;
/// clients sit at one of them.
#[derive(Debug, Clone)]
pub struct LinkModel {
    base: LatencyMatrix,
    jitter: Jitter,
    overrides: Vec<Option<DelayOverride>>,
}

impl LinkModel {
    pub fn new(base: LatencyMatrix, jitter: Jitter) -> Self {
        let n = base.n();
        Self {
            base,
            jitter,
            overrides: vec![None; n],
        }
    }

    pub fn base(&self) -> &LatencyMatrix {
        &self.base
    }

    pub fn set_override(&mut self, replica: ReplicaId, delay: Option<DelayOverride>) {
        self.overrides[replica] = delay;
    }

    pub fn override_of(&self, replica: ReplicaId) -> Option<DelayOverride> {
        self.overrides[replica]
    }

    /// One-way latency in ms of a message from site `from` to site `to`;
    /// `egress` is the replica whose delay override applies, if any.
    /// `+∞` means the message is never delivered.
    pub fn sample(&self, from: usize, to: usize, egress: Option<ReplicaId>, rng: &mut SplitMix64) -> f64 {
        let base = self.base[(from, to)];
        if base.is_infinite() {
            return f64::INFINITY;
        }
        let mut ms = base;
        match self.jitter {
            Jitter::None => {}
            Jitter::Uniform(j) => ms += rng.next_f64() * j,
            Jitter::Normal(sigma) => {
                if sigma > 0.0 {
                    ms += Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
                }
            }
        }
        if let Some(d) = egress.and_then(|r| self.overrides[r]) {
            ms += d.out_ms + rng.next_f64() * d.jitter_ms;
        }
        ms.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_jitter_is_exact() {
        let m = LatencyMatrix::uniform(3, 40.0);
        let l = LinkModel::new(m, Jitter::None);
        let mut rng = SplitMix64::new(1);
        assert_eq!(l.sample(0, 1, Some(0), &mut rng), 40.0);
        assert_eq!(l.sample(1, 1, Some(1), &mut rng), 0.0);
    }

    #[test]
    fn overrides_apply_to_egress_only() {
        let mut l = LinkModel::new(LatencyMatrix::uniform(3, 10.0), Jitter::None);
        l.set_override(
            2,
            Some(DelayOverride {
                out_ms: 120.0,
                jitter_ms: 0.0,
            }),
        );
        let mut rng = SplitMix64::new(1);
        assert_eq!(l.sample(2, 0, Some(2), &mut rng), 130.0);
        assert_eq!(l.sample(0, 2, Some(0), &mut rng), 10.0);
        l.set_override(2, None);
        assert_eq!(l.sample(2, 0, Some(2), &mut rng), 10.0);
    }

    #[test]
    fn jitter_bounds() {
        let mut rng = SplitMix64::new(3);
        let u = LinkModel::new(LatencyMatrix::uniform(2, 10.0), Jitter::Uniform(5.0));
        let n = LinkModel::new(LatencyMatrix::uniform(2, 1.0), Jitter::Normal(50.0));
        for _ in 0..1000 {
            let v = u.sample(0, 1, None, &mut rng);
            assert!((10.0..15.0).contains(&v));
            assert!(n.sample(0, 1, None, &mut rng) >= 0.0);
        }
    }

    #[test]
    fn unreachable_stays_unreachable() {
        let mut m = LatencyMatrix::uniform(2, 10.0);
        m[(0, 1)] = f64::INFINITY;
        let l = LinkModel::new(m, Jitter::Uniform(5.0));
        assert!(l.sample(0, 1, None, &mut SplitMix64::new(0)).is_infinite());
    }

    #[test]
    fn jitter_json_shape() {
        let j: Jitter = serde_json::from_str(r#"{"kind":"uniform","param_ms":4}"#).unwrap();
        assert_eq!(j, Jitter::Uniform(4.0));
        let j: Jitter = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(j, Jitter::None);
    }
}
