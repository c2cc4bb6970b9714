//! Domain types shared by every module of the simulator.
//!
//! Naming follows the role each quantity plays rather than its symbol:
//! `epochs` is the number of local passes, `energy_level` is the battery
//! fraction used for selection, and `energy_joules` (or `*_j`) is physical
//! energy spent. Cold-start delays are `delay_ms`; the differential-privacy
//! failure probability is `dp_delta`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::serverless::ContainerState;

/// Tolerance used when checking that weight triples and distributions sum to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub type ClientId = u32;

/// A single invariant failure found while validating a scenario or state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub(crate) fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Available resource shares of an edge device, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub cpu: f64,
    pub mem: f64,
    pub batt: f64,
}

impl ResourceSnapshot {
    pub fn new(cpu: f64, mem: f64, batt: f64) -> Self {
        Self { cpu, mem, batt }
    }

    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        for (name, v) in [("cpu", self.cpu), ("mem", self.mem), ("batt", self.batt)] {
            if !in_unit(v) {
                out.push(Violation::new(format!("{path}.{name}"), format!("{v} not in [0,1]")));
            }
        }
    }
}

fn check_weight_triple(path: &str, w: [f64; 3], out: &mut Vec<Violation>) {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        out.push(Violation::new(path, format!("weights {w:?} must be finite and nonnegative")));
        return;
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        out.push(Violation::new(path, format!("weights sum to {sum}, expected 1")));
    }
}

/// Convex weights over CPU, memory and battery availability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for HealthWeights {
    fn default() -> Self {
        Self { a1: 0.4, a2: 0.3, a3: 0.3 }
    }
}

impl HealthWeights {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        check_weight_triple(path, [self.a1, self.a2, self.a3], out);
    }
}

/// Weights of the utility score: health and energy reward, drift penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityWeights {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self { b1: 0.4, b2: 0.4, b3: 0.2 }
    }
}

impl UtilityWeights {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        check_weight_triple(path, [self.b1, self.b2, self.b3], out);
    }
}

/// Eligibility thresholds. `theta_d` is in nats and may be infinite, which
/// disables drift exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionThresholds {
    pub theta_h: f64,
    pub theta_e: f64,
    pub theta_d: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            theta_h: 0.6,
            theta_e: 0.5,
            theta_d: 0.1,
        }
    }
}

impl SelectionThresholds {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !in_unit(self.theta_h) {
            out.push(Violation::new(format!("{path}.theta_h"), "must be in [0,1]"));
        }
        if !in_unit(self.theta_e) {
            out.push(Violation::new(format!("{path}.theta_e"), "must be in [0,1]"));
        }
        if self.theta_d.is_nan() || self.theta_d < 0.0 {
            out.push(Violation::new(format!("{path}.theta_d"), "must be >= 0"));
        }
    }
}

/// Empirical label distribution of a client shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SimError::InvalidDistribution("no classes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SimError::InvalidDistribution(format!("negative or non-finite entry in {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(SimError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1, "a distribution needs at least one class");
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    /// Normalized histogram of `counts`. Panics if all counts are zero.
    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        assert!(total > 0, "empty histogram");
        Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        }
    }

    pub fn from_labels(labels: &[usize], k: usize) -> Self {
        let mut counts = vec![0usize; k];
        for &l in labels {
            counts[l] += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Flat dense parameter vector: a global model or a client's returned weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn sub(&self, other: &ModelVector) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &ModelVector) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, s: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|x| x * s).collect())
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Behaviour assigned to a client when the run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackRole {
    #[default]
    #[serde(alias = "none")]
    Honest,
    LabelFlip,
    Noise,
    Dropout,
    Replace,
}

impl AttackRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackRole::Honest => "none",
            AttackRole::LabelFlip => "label_flip",
            AttackRole::Noise => "noise",
            AttackRole::Dropout => "dropout",
            AttackRole::Replace => "replace",
        }
    }
}

/// An edge device participating in the federation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientNode {
    pub id: ClientId,
    pub resources: ResourceSnapshot,
    /// Battery fraction compared against `energy_threshold` at selection.
    pub energy_level: f64,
    /// Per-client energy threshold, decayed by the energy budget.
    pub energy_threshold: f64,
    pub dataset_size: usize,
    pub class_dist: ClassDistribution,
    /// `None` until the client has seen a previous round.
    pub prev_class_dist: Option<ClassDistribution>,
    pub container: ContainerState,
    pub adversary: AttackRole,
}

impl ClientNode {
    pub fn check(&self, out: &mut Vec<Violation>) {
        let path = format!("client[{}]", self.id);
        self.resources.check(&format!("{path}.resources"), out);
        if !in_unit(self.energy_level) {
            out.push(Violation::new(format!("{path}.energy_level"), format!("{} not in [0,1]", self.energy_level)));
        }
        if !in_unit(self.energy_threshold) {
            out.push(Violation::new(format!("{path}.energy_threshold"), "not in [0,1]"));
        }
        if self.dataset_size == 0 {
            out.push(Violation::new(format!("{path}.dataset_size"), "must be >= 1"));
        }
        if let Some(prev) = &self.prev_class_dist {
            if prev.num_classes() != self.class_dist.num_classes() {
                out.push(Violation::new(format!("{path}.prev_class_dist"), "class count differs from class_dist"));
            }
        }
        if !self.container.is_consistent() {
            out.push(Violation::new(format!("{path}.container"), "last_used_round inconsistent with status"));
        }
    }
}

/// Per-round limits on straggler latency and total energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConstraints {
    pub tau_max_ms: f64,
    pub eps_max_j: f64,
}

impl Default for RoundConstraints {
    fn default() -> Self {
        Self {
            tau_max_ms: 10_000.0,
            eps_max_j: 500.0,
        }
    }
}

impl RoundConstraints {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !(self.tau_max_ms > 0.0 && self.tau_max_ms.is_finite()) {
            out.push(Violation::new(format!("{path}.tau_max_ms"), "must be > 0"));
        }
        if !(self.eps_max_j > 0.0 && self.eps_max_j.is_finite()) {
            out.push(Violation::new(format!("{path}.eps_max_j"), "must be > 0"));
        }
    }
}

/// Weights of the accuracy/latency/energy reporting scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            gamma: 1.0 / 3.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            out.push(Violation::new(path, "weights must be finite and nonnegative"));
        } else if w.iter().all(|x| *x == 0.0) {
            out.push(Violation::new(path, "weights must not all be zero"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_triples() {
        let mut v = Vec::new();
        HealthWeights::default().check("hw", &mut v);
        assert!(v.is_empty());
        HealthWeights { a1: 0.5, a2: 0.5, a3: 0.5 }.check("hw", &mut v);
        assert_eq!(v.len(), 1);
        v.clear();
        UtilityWeights { b1: 1.2, b2: -0.2, b3: 0.0 }.check("uw", &mut v);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn distribution_constructors() {
        assert!(ClassDistribution::new(vec![]).is_err());
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.5, 1.5]).is_err());
        let d = ClassDistribution::from_labels(&[0, 1, 1, 1], 3);
        assert_eq!(d.probs(), &[0.25, 0.75, 0.0]);
    }

    #[test]
    fn threshold_bounds() {
        let mut v = Vec::new();
        SelectionThresholds { theta_h: 0.5, theta_e: 0.5, theta_d: f64::INFINITY }.check("t", &mut v);
        assert!(v.is_empty());
        SelectionThresholds { theta_h: 1.5, theta_e: -0.1, theta_d: -1.0 }.check("t", &mut v);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn objective_weights_not_all_zero() {
        let mut v = Vec::new();
        ObjectiveWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 }.check("o", &mut v);
        assert_eq!(v.len(), 1);
    }
}
