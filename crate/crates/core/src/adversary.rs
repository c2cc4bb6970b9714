//! Attack models applied to shards, updates or participation.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledShard;
use crate::learner::ClientUpdate;
use crate::model::{in_unit, AttackRole, ClientId, ModelVector, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub role: AttackRole,
    /// Fraction of clients designated malicious at the start of the run.
    pub fraction: f64,
    /// Exact number of malicious clients; overrides `fraction`.
    pub count: Option<usize>,
    pub noise_sigma: f64,
    /// Per-round drop probability of each malicious client under `dropout`.
    pub dropout_prob: f64,
    /// Half-width of the uniform box used by `replace`.
    pub replace_scale: f64,
    /// A dropout happens after the container was invoked, so the client
    /// still pays the invocation delay and cold-start energy.
    pub drop_after_invoke: bool,
    /// Fixed designation seed. When unset it is derived from the scenario seed.
    pub seed: Option<u64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            role: AttackRole::Honest,
            fraction: 0.2,
            count: None,
            noise_sigma: 1.0,
            dropout_prob: 0.5,
            replace_scale: 10.0,
            drop_after_invoke: true,
            seed: None,
        }
    }
}

impl AttackConfig {
    pub fn check(&self, path: &str, n_clients: usize, out: &mut Vec<Violation>) {
        if !in_unit(self.fraction) {
            out.push(Violation::new(format!("{path}.fraction"), "must be in [0,1]"));
        }
        if !in_unit(self.dropout_prob) {
            out.push(Violation::new(format!("{path}.dropout_prob"), "must be in [0,1]"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            out.push(Violation::new(format!("{path}.noise_sigma"), "must be > 0"));
        }
        if !(self.replace_scale > 0.0 && self.replace_scale.is_finite()) {
            out.push(Violation::new(format!("{path}.replace_scale"), "must be > 0"));
        }
        if let Some(c) = self.count {
            if c > n_clients && n_clients > 0 {
                out.push(Violation::new(format!("{path}.count"), "exceeds the number of clients"));
            }
        }
    }

    pub fn malicious_count(&self, n_clients: usize) -> usize {
        if self.role == AttackRole::Honest {
            return 0;
        }
        self.count
            .unwrap_or_else(|| (self.fraction * n_clients as f64).round() as usize)
            .min(n_clients)
    }
}

/// Role of every client for the whole run, drawn once.
pub fn designate<R: Rng + ?Sized>(ids: &[ClientId], cfg: &AttackConfig, rng: &mut R) -> BTreeMap<ClientId, AttackRole> {
    let k = cfg.malicious_count(ids.len());
    let mut roles: BTreeMap<ClientId, AttackRole> = ids.iter().map(|&id| (id, AttackRole::Honest)).collect();
    for i in index::sample(rng, ids.len(), k) {
        roles.insert(ids[i], cfg.role);
    }
    roles
}

/// Map every label `k` to `(K − 1) − k`.
pub fn flip_labels(shard: &LabeledShard, n_classes: usize) -> LabeledShard {
    let mut out = shard.clone();
    for l in &mut out.labels {
        *l = n_classes - 1 - *l;
    }
    out
}

fn perturb<R: Rng + ?Sized>(v: &ModelVector, sigma: f64, rng: &mut R) -> ModelVector {
    ModelVector(v.0.iter().map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Add i.i.d. `N(0, sigma²)` noise to each coordinate of the update.
pub fn inject_noise<R: Rng + ?Sized>(update: &ClientUpdate, sigma: f64, rng: &mut R) -> ClientUpdate {
    ClientUpdate {
        delta: perturb(&update.delta, sigma, rng),
        ..update.clone()
    }
}

/// `true` if the client takes part this round; drops with probability `prob`.
pub fn maybe_dropout<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() >= prob
}

/// Replace the update with an i.i.d. `Uniform(−scale, scale)` vector.
pub fn replace_model<R: Rng + ?Sized>(update: &ClientUpdate, rng: &mut R, scale: f64) -> ClientUpdate {
    ClientUpdate {
        delta: ModelVector((0..update.delta.dim()).map(|_| rng.random_range(-scale..=scale)).collect()),
        ..update.clone()
    }
}
