//! Gaussian-mechanism layer: update clipping, aggregation noise and the
//! per-round (ε, δ) estimate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{ModelVector, Violation};

/// Where Gaussian noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpPoint {
    /// Once, on the weighted aggregate.
    #[default]
    Server,
    /// On every clipped client update before aggregation.
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub enabled: bool,
    pub sigma: f64,
    pub clip_s: f64,
    #[serde(rename = "delta")]
    pub dp_delta: f64,
    pub point: DpPoint,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sigma: 0.01,
            clip_s: 5.0,
            dp_delta: 1e-5,
            point: DpPoint::Server,
        }
    }
}

impl DpConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !self.enabled {
            return;
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            out.push(Violation::new(format!("{path}.sigma"), "must be > 0"));
        }
        if !(self.clip_s > 0.0 && self.clip_s.is_finite()) {
            out.push(Violation::new(format!("{path}.clip_s"), "must be > 0"));
        }
        if !(self.dp_delta > 0.0 && self.dp_delta < 1.0) {
            out.push(Violation::new(format!("{path}.delta"), "must be in (0,1)"));
        }
    }
}

/// Scale `delta` down to ℓ2 norm `clip_s` if it is longer; otherwise return it unchanged.
pub fn clip_update(delta: &ModelVector, clip_s: f64) -> ModelVector {
    let norm = delta.norm();
    if norm <= clip_s {
        delta.clone()
    } else {
        delta.scale(clip_s / norm)
    }
}

pub fn add_dp_noise<R: Rng + ?Sized>(aggregate: &ModelVector, sigma: f64, rng: &mut R) -> ModelVector {
    ModelVector(
        aggregate
            .0
            .iter()
            .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// `sqrt(2 ln(1.25/δ)) / σ · S / n`, natural log.
pub fn epsilon(sigma: f64, clip_s: f64, n_clients: usize, dp_delta: f64) -> f64 {
    (2.0 * (1.25 / dp_delta).ln()).sqrt() / sigma * clip_s / n_clients as f64
}
