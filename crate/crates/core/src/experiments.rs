//! Multi-run drivers: policy comparison, ablations, threshold sweeps and the
//! orchestration complexity benchmark.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Result, SimError};
use crate::model::{SelectionThresholds, UtilityWeights, Violation};
use crate::rng::{substream, Stream};
use crate::scheduler::{fedfog_schedule, naive_schedule, random_schedule, ClientScores, PolicyKind};
use crate::sim::{repeat_seed, run_simulation};
use crate::telemetry::RoundRecord;

/// Aggregate view of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub final_accuracy: f64,
    pub mean_latency_ms: f64,
    pub total_energy_j: f64,
    pub total_cold_starts: u64,
    pub mean_participation: f64,
    pub mean_objective: f64,
}

impl PolicySummary {
    pub fn from_records(policy: PolicyKind, records: &[RoundRecord]) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            policy,
            final_accuracy: records.last().map_or(0.0, |r| r.accuracy),
            mean_latency_ms: records.iter().map(|r| r.latency_ms).sum::<f64>() / n,
            total_energy_j: records.iter().map(|r| r.energy_j).sum(),
            total_cold_starts: records.iter().map(|r| r.cold_starts).sum(),
            mean_participation: mean_participation(records),
            mean_objective: records.iter().map(|r| r.objective_j).sum::<f64>() / n,
        }
    }
}

/// Average number of selected clients per round.
pub fn mean_participation(records: &[RoundRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.selected_ids.len() as f64).sum::<f64>() / records.len() as f64
}

/// Run the same scenario under each policy.
pub fn compare_policies(base: &ScenarioConfig, policies: &[PolicyKind]) -> Result<Vec<PolicySummary>> {
    policies
        .iter()
        .map(|&p| {
            let mut cfg = base.clone();
            cfg.policy.kind = p;
            Ok(PolicySummary::from_records(p, &run_simulation(&cfg)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoScheduler,
    NoDriftManager,
    NoEnergyModel,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoScheduler, Ablation::NoDriftManager, Ablation::NoEnergyModel];
}

pub fn apply_ablation(base: &ScenarioConfig, ablation: Ablation) -> ScenarioConfig {
    let mut cfg = base.clone();
    match ablation {
        Ablation::Full => {}
        Ablation::NoScheduler => cfg.policy.kind = PolicyKind::NaiveFaas,
        Ablation::NoDriftManager => cfg.policy.thresholds.theta_d = f64::INFINITY,
        Ablation::NoEnergyModel => {
            cfg.policy.thresholds.theta_e = 0.0;
            cfg.energy_budget.lambda = 0.0;
        }
    }
    cfg
}

/// Threshold grid, either as explicit cells or as per-axis value lists whose
/// Cartesian product is taken. A missing axis keeps the base scenario's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    /// `[theta_h, theta_e, theta_d]` triples.
    pub cells: Option<Vec<[f64; 3]>>,
    pub theta_h: Option<Vec<f64>>,
    pub theta_e: Option<Vec<f64>>,
    pub theta_d: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn from_cells(cells: &[[f64; 3]]) -> Self {
        Self {
            cells: Some(cells.to_vec()),
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Parse {
            what: "sweep grid".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn thresholds(&self, base: &SelectionThresholds) -> Vec<SelectionThresholds> {
        if let Some(cells) = &self.cells {
            return cells
                .iter()
                .map(|&[theta_h, theta_e, theta_d]| SelectionThresholds { theta_h, theta_e, theta_d })
                .collect();
        }
        let axis = |v: &Option<Vec<f64>>, d: f64| v.clone().unwrap_or_else(|| vec![d]);
        let mut out = Vec::new();
        for &theta_h in &axis(&self.theta_h, base.theta_h) {
            for &theta_e in &axis(&self.theta_e, base.theta_e) {
                for &theta_d in &axis(&self.theta_d, base.theta_d) {
                    out.push(SelectionThresholds { theta_h, theta_e, theta_d });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub thresholds: SelectionThresholds,
    pub repeats: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub std_accuracy: f64,
    pub mean_participation: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every grid cell `repeats` times. Repeat `r` uses the same derived seed
/// in every cell, so cells are compared on paired runs.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid, repeats: usize) -> Result<Vec<SweepRow>> {
    let cells = grid.thresholds(&base.policy.thresholds);
    if cells.is_empty() {
        return Err(SimError::InvalidScenario(vec![Violation::new("grid", "has no cells")]));
    }
    if repeats == 0 {
        return Err(SimError::InvalidScenario(vec![Violation::new("repeats", "must be >= 1")]));
    }
    cells
        .into_iter()
        .map(|thresholds| {
            let mut accs = Vec::with_capacity(repeats);
            let mut parts = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let mut cfg = base.clone();
                cfg.policy.thresholds = thresholds;
                cfg.seed = repeat_seed(base.seed, r as u64);
                let records = run_simulation(&cfg)?;
                accs.push(records.last().map_or(0.0, |x| x.accuracy));
                parts.push(mean_participation(&records));
            }
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            Ok(SweepRow {
                thresholds,
                repeats,
                mean_accuracy,
                std_accuracy,
                mean_participation: parts.iter().sum::<f64>() / repeats as f64,
            })
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 7] =
    ["theta_h", "theta_e", "theta_d", "repeats", "mean_accuracy", "std_accuracy", "mean_participation"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        let t = r.thresholds;
        out.write_record([
            t.theta_h.to_string(),
            t.theta_e.to_string(),
            t.theta_d.to_string(),
            r.repeats.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.mean_participation.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub fedfog: u64,
    pub naive_faas: u64,
    pub random: u64,
}

/// One selection pass per policy over `n` synthetic, all-eligible clients.
pub fn complexity_bench(ns: &[usize], seed: u64) -> Result<Vec<BenchRow>> {
    let thresholds = SelectionThresholds {
        theta_h: 0.0,
        theta_e: 0.0,
        theta_d: f64::INFINITY,
    };
    let weights = UtilityWeights::default();
    ns.iter()
        .map(|&n| {
            if n < 2 {
                return Err(SimError::InvalidScenario(vec![Violation::new("clients", "bench sizes must be >= 2")]));
            }
            let mut rng = substream(seed, Stream::Bench, n as u64, 0);
            let scores: Vec<ClientScores> = (0..n as u32)
                .map(|id| ClientScores {
                    id,
                    health: 1.0 - rng.random::<f64>(),
                    energy: 1.0 - rng.random::<f64>(),
                    drift: rng.random::<f64>(),
                    energy_threshold: 0.0,
                })
                .collect();
            let ids: Vec<u32> = scores.iter().map(|s| s.id).collect();
            Ok(BenchRow {
                n,
                fedfog: fedfog_schedule(&scores, &thresholds, &weights, None).op_count,
                naive_faas: naive_schedule(&ids).op_count,
                random: random_schedule(&ids, n, &mut rng)?.op_count,
            })
        })
        .collect()
}
