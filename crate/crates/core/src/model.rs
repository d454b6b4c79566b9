//! Binary weighted quorum sizing, quorum predicates and the configuration space.
//!
//! Weights are kept as integers scaled by `f`: `V_min` is `f` units and
//! `V_max = 1 + Δ/f` is `f + Δ` units, so every quorum comparison is exact
//! even when `V_max` is not an integer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense replica index in `0..n`.
pub type ReplicaId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("f must be at least 1 (got {0})")]
    InvalidFaultThreshold(usize),
    #[error("replica {replica} out of range for n = {n}")]
    ReplicaOutOfRange { replica: ReplicaId, n: usize },
    #[error("weight configuration needs exactly {expected} V_max replicas, got {got}")]
    WrongMaxCount { expected: usize, got: usize },
    #[error("duplicate replica {0} in V_max set")]
    DuplicateReplica(ReplicaId),
    #[error("leader {0} must hold V_max")]
    LeaderWithoutMaxWeight(ReplicaId),
    #[error("no leader candidate can be placed in any V_max set")]
    NoLeaderCandidates,
    #[error("malformed configuration `{0}`, expected `leader:r1,r2,...`")]
    MalformedConfig(String),
}

/// Voting weight in units of `1/f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Weight(pub u64);

impl std::ops::Add for Weight {
    type Output = Weight;
    fn add(self, rhs: Weight) -> Weight {
        Weight(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Weight {
    fn add_assign(&mut self, rhs: Weight) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Weight {
    fn sum<I: Iterator<Item = Weight>>(iter: I) -> Weight {
        iter.fold(Weight(0), |a, b| a + b)
    }
}

/// Sizing constants of a WHEAT-style system: `n = 3f + 1 + Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemShape {
    f: usize,
    delta: usize,
    n: usize,
}

impl SystemShape {
    pub fn derive(f: usize, delta: usize) -> Result<Self, ModelError> {
        if f < 1 {
            return Err(ModelError::InvalidFaultThreshold(f));
        }
        Ok(Self {
            f,
            delta,
            n: 3 * f + 1 + delta,
        })
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of replicas holding `V_max`.
    pub fn max_holders(&self) -> usize {
        2 * self.f
    }

    /// Denominator of the weight units.
    pub fn weight_scale(&self) -> u64 {
        self.f as u64
    }

    pub fn v_min(&self) -> Weight {
        Weight(self.f as u64)
    }

    pub fn v_max(&self) -> Weight {
        Weight((self.f + self.delta) as u64)
    }

    /// `Q_v = 2(f + Δ) + 1`, scaled.
    pub fn q_v(&self) -> Weight {
        Weight(self.f as u64 * (2 * (self.f + self.delta) + 1) as u64)
    }

    pub fn total_weight(&self) -> Weight {
        Weight(self.max_holders() as u64 * self.v_max().0 + (self.n - self.max_holders()) as u64 * self.v_min().0)
    }

    /// Size of an egalitarian BFT quorum, `⌈(n + f + 1) / 2⌉`.
    pub fn traditional_quorum(&self) -> usize {
        (self.n + self.f + 1).div_ceil(2)
    }

    pub fn to_f64(&self, w: Weight) -> f64 {
        w.0 as f64 / self.weight_scale() as f64
    }

    /// `V_max` as a reduced fraction `(numerator, denominator)`.
    pub fn v_max_ratio(&self) -> (u64, u64) {
        reduce(self.v_max().0, self.weight_scale())
    }

    /// `Q_v` as a reduced fraction.
    pub fn q_v_ratio(&self) -> (u64, u64) {
        reduce(self.q_v().0, self.weight_scale())
    }

    /// Relative size of the smallest weighted quorum against an egalitarian one.
    pub fn fast_quorum_ratio(&self) -> f64 {
        let (num, den) = self.fast_quorum_ratio_parts();
        num as f64 / den as f64
    }

    pub fn fast_quorum_ratio_parts(&self) -> (u64, u64) {
        reduce((2 * self.f + 1) as u64, self.traditional_quorum() as u64)
    }

    /// Number of `(V_max set, leader)` pairs: `C(n, 2f) · 2f`.
    pub fn count_configurations(&self) -> u128 {
        binomial(self.n as u64, self.max_holders() as u64) * self.max_holders() as u128
    }

    pub fn check_replica(&self, replica: ReplicaId) -> Result<(), ModelError> {
        if replica < self.n {
            Ok(())
        } else {
            Err(ModelError::ReplicaOutOfRange { replica, n: self.n })
        }
    }

    /// True iff the summed weights of `subset` reach `Q_v`. Ids outside
    /// `0..n` and repeated ids contribute nothing.
    pub fn is_quorum(&self, config: &WeightConfig, subset: &[ReplicaId]) -> bool {
        let mut seen = vec![false; self.n];
        let mut acc = Weight(0);
        for &r in subset {
            if r < self.n && !seen[r] {
                seen[r] = true;
                acc += config.weight_of(r);
            }
        }
        acc >= self.q_v()
    }

    /// All configurations whose leader is one of `leader_candidates`, in
    /// lexicographic order of the sorted `V_max` set, then by leader id.
    pub fn enumerate_configurations(&self, leader_candidates: &[ReplicaId]) -> Result<Vec<WeightConfig>, ModelError> {
        let mut allowed = vec![false; self.n];
        for &c in leader_candidates {
            if c < self.n {
                allowed[c] = true;
            }
        }
        let mut out = Vec::new();
        for r_max in Combinations::new(self.n, self.max_holders()) {
            for &leader in &r_max {
                if allowed[leader] {
                    out.push(WeightConfig::from_sorted(self, leader, r_max.clone()));
                }
            }
        }
        if out.is_empty() {
            return Err(ModelError::NoLeaderCandidates);
        }
        Ok(out)
    }

    /// Every replica id, the default leader candidate set.
    pub fn all_replicas(&self) -> Vec<ReplicaId> {
        (0..self.n).collect()
    }
}

impl fmt::Display for SystemShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} f={} Δ={}", self.n, self.f, self.delta)
    }
}

/// A concrete weight assignment: which `2f` replicas hold `V_max`, and the leader.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightConfig {
    leader: ReplicaId,
    r_max: Vec<ReplicaId>,
    weights: Vec<Weight>,
}

impl WeightConfig {
    pub fn new(shape: &SystemShape, leader: ReplicaId, r_max: &[ReplicaId]) -> Result<Self, ModelError> {
        let mut sorted = r_max.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateReplica(w[0]));
            }
        }
        for &r in &sorted {
            shape.check_replica(r)?;
        }
        shape.check_replica(leader)?;
        if sorted.len() != shape.max_holders() {
            return Err(ModelError::WrongMaxCount {
                expected: shape.max_holders(),
                got: sorted.len(),
            });
        }
        if sorted.binary_search(&leader).is_err() {
            return Err(ModelError::LeaderWithoutMaxWeight(leader));
        }
        Ok(Self::from_sorted(shape, leader, sorted))
    }

    /// `r_max` must be sorted, duplicate-free, of size `2f` and contain `leader`.
    pub(crate) fn from_sorted(shape: &SystemShape, leader: ReplicaId, r_max: Vec<ReplicaId>) -> Self {
        let mut weights = vec![shape.v_min(); shape.n()];
        for &r in &r_max {
            weights[r] = shape.v_max();
        }
        Self { leader, r_max, weights }
    }

    /// Parses `leader:r1,r2,...`. The leader is added to the set if omitted.
    pub fn parse(shape: &SystemShape, text: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::MalformedConfig(text.to_string());
        let (leader, rest) = text.split_once(':').ok_or_else(bad)?;
        let leader: ReplicaId = leader.trim().parse().map_err(|_| bad())?;
        let mut r_max = rest
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<ReplicaId>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if !r_max.contains(&leader) {
            r_max.push(leader);
        }
        Self::new(shape, leader, &r_max)
    }

    pub fn leader(&self) -> ReplicaId {
        self.leader
    }

    /// `V_max` holders in ascending id order.
    pub fn r_max(&self) -> &[ReplicaId] {
        &self.r_max
    }

    /// `V_min` holders in ascending id order.
    pub fn r_min(&self) -> Vec<ReplicaId> {
        (0..self.weights.len()).filter(|r| self.r_max.binary_search(r).is_err()).collect()
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Weight] {
        &self.weights
    }

    pub fn weight_of(&self, replica: ReplicaId) -> Weight {
        self.weights[replica]
    }

    pub fn holds_max(&self, replica: ReplicaId) -> bool {
        self.r_max.binary_search(&replica).is_ok()
    }

    /// Moves `V_max` from `from` to `to`. When `from` was the leader the
    /// leadership follows the weight.
    pub fn swap(&self, from: ReplicaId, to: ReplicaId) -> Self {
        debug_assert!(self.holds_max(from) && !self.holds_max(to));
        let mut r_max: Vec<ReplicaId> = self.r_max.iter().map(|&r| if r == from { to } else { r }).collect();
        r_max.sort_unstable();
        let leader = if from == self.leader { to } else { self.leader };
        let mut weights = self.weights.clone();
        weights.swap(from, to);
        Self { leader, r_max, weights }
    }

    /// Same `V_max` set, different leader. `leader` must already hold `V_max`.
    pub fn with_leader(&self, leader: ReplicaId) -> Self {
        debug_assert!(self.holds_max(leader));
        Self {
            leader,
            ..self.clone()
        }
    }
}

impl fmt::Display for WeightConfig {
    /// `leader:r1,r2,...`, the same form [`WeightConfig::parse`] accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.leader)?;
        for (i, r) in self.r_max.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(num: u64, den: u64) -> (u64, u64) {
    let g = gcd(num, den).max(1);
    (num / g, den / g)
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Lexicographic k-subsets of `0..n`.
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = if k <= n { Some((0..k).collect()) } else { None };
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                return Some(out);
            }
        }
        Some(out)
    }
}
