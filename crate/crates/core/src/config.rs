//! Scenario description, TOML ingestion and validation.
//!
//! Every section and field is optional in the file; anything left out takes
//! the default shown by [`ScenarioConfig::default`]. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::data::{DriftSchedule, PartitionConfig};
use crate::error::{Result, SimError};
use crate::health::DriftConfig;
use crate::learner::TrainingConfig;
use crate::model::{in_unit, HealthWeights, ObjectiveWeights, RoundConstraints, Violation};
use crate::privacy::DpConfig;
use crate::scheduler::{EnergyBudgetConfig, SchedulerPolicy};
use crate::serverless::ColdStartParams;

/// Energy and transfer costs of one client update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    /// Joules per compute unit (one sample processed for one epoch).
    pub c_cpu: f64,
    /// Joules per transmitted byte.
    pub c_tx: f64,
    pub payload_bytes: f64,
    pub bandwidth_bytes_per_ms: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            c_cpu: 0.01,
            c_tx: 1e-4,
            payload_bytes: 4096.0,
            bandwidth_bytes_per_ms: 100.0,
        }
    }
}

impl EnergyModel {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        for (name, v) in [("c_cpu", self.c_cpu), ("c_tx", self.c_tx), ("payload_bytes", self.payload_bytes)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(Violation::new(format!("{path}.{name}"), "must be >= 0"));
            }
        }
        if !(self.bandwidth_bytes_per_ms > 0.0 && self.bandwidth_bytes_per_ms.is_finite()) {
            out.push(Violation::new(format!("{path}.bandwidth_bytes_per_ms"), "must be > 0"));
        }
    }

    pub fn comm_ms(&self) -> f64 {
        self.payload_bytes / self.bandwidth_bytes_per_ms
    }
}

/// Heterogeneity of the simulated devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub cpu_min: f64,
    pub cpu_max: f64,
    pub mem_min: f64,
    pub mem_max: f64,
    /// Range of the initial battery fraction.
    pub energy_min: f64,
    pub energy_max: f64,
    /// Relative per-round fluctuation of CPU and memory availability.
    pub resource_jitter: f64,
    /// Joules corresponding to a full battery.
    pub battery_capacity_j: f64,
    /// Fixed server-side aggregation cost added to every non-empty round.
    pub aggregation_ms: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            cpu_min: 0.3,
            cpu_max: 1.0,
            mem_min: 0.3,
            mem_max: 1.0,
            energy_min: 0.4,
            energy_max: 1.0,
            resource_jitter: 0.1,
            battery_capacity_j: 1000.0,
            aggregation_ms: 50.0,
        }
    }
}

impl FleetConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        for (name, lo, hi) in [
            ("cpu", self.cpu_min, self.cpu_max),
            ("mem", self.mem_min, self.mem_max),
            ("energy", self.energy_min, self.energy_max),
        ] {
            if !(in_unit(lo) && in_unit(hi) && lo <= hi) {
                out.push(Violation::new(format!("{path}.{name}_min/{name}_max"), "need 0 <= min <= max <= 1"));
            }
        }
        if !in_unit(self.resource_jitter) {
            out.push(Violation::new(format!("{path}.resource_jitter"), "must be in [0,1]"));
        }
        if !(self.battery_capacity_j > 0.0 && self.battery_capacity_j.is_finite()) {
            out.push(Violation::new(format!("{path}.battery_capacity_j"), "must be > 0"));
        }
        if !(self.aggregation_ms >= 0.0 && self.aggregation_ms.is_finite()) {
            out.push(Violation::new(format!("{path}.aggregation_ms"), "must be >= 0"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub rounds: u64,
    pub seed: u64,
    pub partition: PartitionConfig,
    pub drift: DriftSchedule,
    pub drift_detection: DriftConfig,
    pub training: TrainingConfig,
    pub health_weights: HealthWeights,
    pub policy: SchedulerPolicy,
    pub cold_start: ColdStartParams,
    pub constraints: RoundConstraints,
    pub energy_budget: EnergyBudgetConfig,
    pub attack: AttackConfig,
    pub dp: DpConfig,
    pub energy_model: EnergyModel,
    pub fleet: FleetConfig,
    pub objective: ObjectiveWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            seed: 42,
            partition: PartitionConfig::default(),
            drift: DriftSchedule::default(),
            drift_detection: DriftConfig::default(),
            training: TrainingConfig::default(),
            health_weights: HealthWeights::default(),
            policy: SchedulerPolicy::default(),
            cold_start: ColdStartParams::default(),
            constraints: RoundConstraints::default(),
            energy_budget: EnergyBudgetConfig::default(),
            attack: AttackConfig::default(),
            dp: DpConfig::default(),
            energy_model: EnergyModel::default(),
            fleet: FleetConfig::default(),
            objective: ObjectiveWeights::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Parse {
            what: "scenario".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Parse { message, .. } => SimError::Parse {
                what: path.as_ref().display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config always serializes")
    }

    /// Fail with every violation if the scenario is not runnable.
    pub fn validated(self) -> Result<Self> {
        let v = validate_scenario(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(SimError::InvalidScenario(v))
        }
    }
}

/// Every invariant violated anywhere in the scenario; empty when runnable.
pub fn validate_scenario(config: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = config.partition.n_clients;
    if config.rounds < 1 {
        out.push(Violation::new("rounds", "must be >= 1"));
    }
    config.partition.check("partition", &mut out);
    config.drift.check("drift", n, &mut out);
    config.drift_detection.check("drift_detection", &mut out);
    config.training.check("training", &mut out);
    config.health_weights.check("health_weights", &mut out);
    config.policy.check("policy", &mut out);
    config.cold_start.check("cold_start", &mut out);
    config.constraints.check("constraints", &mut out);
    config.energy_budget.check("energy_budget", &mut out);
    config.attack.check("attack", n, &mut out);
    config.dp.check("dp", &mut out);
    config.energy_model.check("energy_model", &mut out);
    config.fleet.check("fleet", &mut out);
    config.objective.check("objective", &mut out);
    out
}
