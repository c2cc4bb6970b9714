//! Deterministic, round-driven simulator of federated learning orchestrated
//! over serverless edge/fog infrastructure.
//!
//! A [`config::ScenarioConfig`] describes the fleet, data, policy and attack
//! setup; [`sim::run_simulation`] executes it and returns one
//! [`telemetry::RoundRecord`] per round.

pub mod adversary;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod health;
pub mod learner;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod scheduler;
pub mod serverless;
pub mod sim;
pub mod telemetry;

pub use config::{validate_scenario, ScenarioConfig};
pub use error::{Result, SimError};
pub use sim::{run_simulation, SimState};
pub use telemetry::{export_telemetry, RoundRecord, TelemetryFormat};
