//! Client health scoring and round-over-round drift detection.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{ClassDistribution, ClientNode, HealthWeights, ResourceSnapshot, Violation};

/// Additive smoothing applied to both distributions before computing KL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub smoothing_eps: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { smoothing_eps: 1e-9 }
    }
}

impl DriftConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !(self.smoothing_eps > 0.0 && self.smoothing_eps.is_finite()) {
            out.push(Violation::new(format!("{path}.smoothing_eps"), "must be > 0"));
        }
    }
}

/// Weighted combination of CPU, memory and battery availability.
pub fn health_score(snapshot: &ResourceSnapshot, weights: &HealthWeights) -> f64 {
    weights.a1 * snapshot.cpu + weights.a2 * snapshot.mem + weights.a3 * snapshot.batt
}

/// `KL(p ‖ q)` in nats. Both arguments get `smoothing_eps` added to every
/// entry and are renormalized, so zeros in `q` never produce infinities.
pub fn kl_divergence(p: &ClassDistribution, q: &ClassDistribution, cfg: &DriftConfig) -> Result<f64> {
    let k = p.num_classes();
    if q.num_classes() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            found: q.num_classes(),
        });
    }
    let eps = cfg.smoothing_eps;
    let norm = 1.0 + k as f64 * eps;
    let kl: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| {
            let ps = (pi + eps) / norm;
            let qs = (qi + eps) / norm;
            ps * (ps / qs).ln()
        })
        .sum();
    // Rounding can leave a tiny negative residue for near-identical inputs.
    Ok(kl.max(0.0))
}

/// Drift of the client's current label distribution against the previous
/// round's, `KL(current ‖ previous)`. Zero when there is no previous round.
pub fn drift_score(client: &ClientNode, cfg: &DriftConfig) -> f64 {
    match &client.prev_class_dist {
        // Shapes are checked by scenario validation; treat a mismatch as no history.
        Some(prev) => kl_divergence(&client.class_dist, prev, cfg).unwrap_or(0.0),
        None => 0.0,
    }
}
