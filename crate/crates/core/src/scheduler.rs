//! Client selection and scheduling policies.
//!
//! The utility-aware policy filters clients by health, energy and drift,
//! orders survivors with a binary heap, and prunes the tail until the round
//! fits its latency and energy limits. Two baselines are provided for
//! comparison: redeploy-everything with pairwise status polling, and a
//! uniform random sample.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::health::{drift_score, health_score, DriftConfig};
use crate::model::{
    ClientId, ClientNode, HealthWeights, ObjectiveWeights, RoundConstraints, SelectionThresholds, UtilityWeights,
    Violation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Fedfog,
    NaiveFaas,
    Random,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Fedfog => "fedfog",
            PolicyKind::NaiveFaas => "naive_faas",
            PolicyKind::Random => "random",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "fedfog" => Ok(Self::Fedfog),
            "naive_faas" => Ok(Self::NaiveFaas),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown scheduler `{other}` (expected fedfog, naive_faas or random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerPolicy {
    #[serde(rename = "scheduler")]
    pub kind: PolicyKind,
    pub thresholds: SelectionThresholds,
    pub utility_weights: UtilityWeights,
    pub top_k: Option<usize>,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Fedfog,
            thresholds: SelectionThresholds::default(),
            utility_weights: UtilityWeights::default(),
            top_k: None,
        }
    }
}

impl SchedulerPolicy {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        self.thresholds.check(&format!("{path}.thresholds"), out);
        self.utility_weights.check(&format!("{path}.utility_weights"), out);
        if self.top_k == Some(0) {
            out.push(Violation::new(format!("{path}.top_k"), "must be >= 1 when set"));
        }
    }
}

/// Which clients `E_avg` is averaged over when decaying energy thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetAverage {
    #[default]
    All,
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyBudgetConfig {
    pub lambda: f64,
    pub budget_avg: BudgetAverage,
}

impl Default for EnergyBudgetConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            budget_avg: BudgetAverage::All,
        }
    }
}

impl EnergyBudgetConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(Violation::new(format!("{path}.lambda"), "must be >= 0"));
        }
    }
}

/// Ordered selection plus the number of abstract operations spent producing it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected: Vec<ClientId>,
    pub op_count: u64,
}

/// Per-client quantities consumed by selection and ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientScores {
    pub id: ClientId,
    pub health: f64,
    pub energy: f64,
    pub drift: f64,
    /// The client's own (budgeted) energy threshold.
    pub energy_threshold: f64,
}

impl ClientScores {
    pub fn utility(&self, w: &UtilityWeights) -> f64 {
        utility(self.health, self.energy, self.drift, w)
    }

    pub fn is_eligible(&self, t: &SelectionThresholds) -> bool {
        self.health > t.theta_h && self.energy > self.energy_threshold && self.drift < t.theta_d
    }
}

pub fn score_client(client: &ClientNode, health_weights: &HealthWeights, drift_cfg: &DriftConfig) -> ClientScores {
    ClientScores {
        id: client.id,
        health: health_score(&client.resources, health_weights),
        energy: client.energy_level,
        drift: drift_score(client, drift_cfg),
        energy_threshold: client.energy_threshold,
    }
}

/// Clients with health above `theta_h`, energy above their own threshold and
/// drift below `theta_d`, all strict. `thresholds.theta_e` only seeds each
/// client's `energy_threshold` at round zero; the per-client value is what
/// gets compared here.
pub fn select_clients(
    clients: &[ClientNode],
    health_weights: &HealthWeights,
    thresholds: &SelectionThresholds,
    drift_cfg: &DriftConfig,
) -> BTreeSet<ClientId> {
    let scores: Vec<ClientScores> = clients.iter().map(|c| score_client(c, health_weights, drift_cfg)).collect();
    select_eligible(&scores, thresholds)
}

pub fn select_eligible(scores: &[ClientScores], thresholds: &SelectionThresholds) -> BTreeSet<ClientId> {
    scores.iter().filter(|s| s.is_eligible(thresholds)).map(|s| s.id).collect()
}

pub fn utility(health: f64, energy: f64, drift: f64, w: &UtilityWeights) -> f64 {
    w.b1 * health + w.b2 * energy - w.b3 * drift
}

/// Max-heap over `(id, utility)` that counts every comparison it makes.
struct CountingHeap {
    items: Vec<(ClientId, f64)>,
    comparisons: u64,
}

impl CountingHeap {
    fn from_vec(items: Vec<(ClientId, f64)>) -> Self {
        let mut heap = Self { items, comparisons: 0 };
        let n = heap.items.len();
        for i in (0..n / 2).rev() {
            heap.sift_down(i, n);
        }
        heap
    }

    /// Higher utility first; equal utilities by ascending id.
    fn better(&mut self, a: (ClientId, f64), b: (ClientId, f64)) -> bool {
        self.comparisons += 1;
        a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
    }

    fn outranks(&mut self, a: usize, b: usize) -> bool {
        self.better(self.items[a], self.items[b])
    }

    fn sift_down(&mut self, mut i: usize, len: usize) {
        loop {
            let left = 2 * i + 1;
            if left >= len {
                return;
            }
            let right = left + 1;
            let child = if right < len && self.outranks(right, left) { right } else { left };
            if !self.outranks(child, i) {
                return;
            }
            self.items.swap(i, child);
            i = child;
        }
    }

    /// Bottom-up variant for the root: follow the better child down to a
    /// leaf, then climb back to where the root item belongs.
    fn sift_root(&mut self) {
        let len = self.items.len();
        if len < 2 {
            return;
        }
        let x = self.items[0];
        let mut j = 0;
        loop {
            let left = 2 * j + 1;
            if left >= len {
                break;
            }
            let right = left + 1;
            j = if right < len && self.outranks(right, left) { right } else { left };
        }
        while j > 0 && self.better(x, self.items[j]) {
            j = (j - 1) / 2;
        }
        let mut carry = x;
        loop {
            std::mem::swap(&mut carry, &mut self.items[j]);
            if j == 0 {
                break;
            }
            j = (j - 1) / 2;
        }
    }

    fn pop(&mut self) -> Option<(ClientId, f64)> {
        let last = self.items.len().checked_sub(1)?;
        self.items.swap(0, last);
        let top = self.items.pop();
        self.sift_root();
        top
    }
}

/// Order candidates by utility, descending, via a binary heap.
/// Ties go to the lower client id. With `top_k`, only that many are popped.
pub fn rank_clients(candidates: &[(ClientId, f64)], top_k: Option<usize>) -> SelectionOutcome {
    let mut heap = CountingHeap::from_vec(candidates.to_vec());
    let take = top_k.unwrap_or(candidates.len()).min(candidates.len());
    let selected = std::iter::from_fn(|| heap.pop()).take(take).map(|(id, _)| id).collect();
    SelectionOutcome {
        selected,
        op_count: heap.comparisons,
    }
}

/// Full utility-aware pass: one eligibility check per client, then heap ranking.
pub fn fedfog_schedule(
    scores: &[ClientScores],
    thresholds: &SelectionThresholds,
    weights: &UtilityWeights,
    top_k: Option<usize>,
) -> SelectionOutcome {
    let eligible: Vec<(ClientId, f64)> = scores
        .iter()
        .filter(|s| s.is_eligible(thresholds))
        .map(|s| (s.id, s.utility(weights)))
        .collect();
    let mut outcome = rank_clients(&eligible, top_k);
    outcome.op_count += scores.len() as u64;
    outcome
}

/// Decay a client's energy threshold by its share of last round's energy.
pub fn update_energy_threshold(
    theta_prev: f64,
    energy_used_prev: f64,
    energy_avg: f64,
    cfg: &EnergyBudgetConfig,
) -> Result<f64> {
    if energy_avg.is_nan() || energy_avg <= 0.0 {
        return Err(SimError::NonPositiveEnergyAverage(energy_avg));
    }
    Ok(theta_prev * (-cfg.lambda * energy_used_prev / energy_avg).exp())
}

/// Redeploy every function and have each one poll every other: all clients
/// in id order, at `N + N(N-1)` operations.
pub fn naive_schedule(ids: &[ClientId]) -> SelectionOutcome {
    let mut selected = ids.to_vec();
    selected.sort_unstable();
    let n = selected.len() as u64;
    SelectionOutcome {
        selected,
        op_count: n + n * n.saturating_sub(1),
    }
}

/// Uniform sample of `k` ids without replacement (partial Fisher-Yates).
pub fn random_schedule<R: Rng + ?Sized>(ids: &[ClientId], k: usize, rng: &mut R) -> Result<SelectionOutcome> {
    let n = ids.len();
    if k > n {
        return Err(SimError::SampleTooLarge { k, n });
    }
    let mut pool = ids.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    Ok(SelectionOutcome {
        selected: pool,
        op_count: (n + k) as u64,
    })
}

/// Clamp `value / bound` into `[0, 1]`.
pub fn normalize_to_bound(value: f64, bound: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    (value / bound).clamp(0.0, 1.0)
}

/// Reporting scalar `α·accuracy − β·latency − γ·energy`. Latency and energy
/// are expected to be normalized by the caller.
pub fn objective_value(accuracy: f64, latency: f64, energy: f64, w: &ObjectiveWeights) -> f64 {
    w.alpha * accuracy - w.beta * latency - w.gamma * energy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    Feasible,
    Infeasible { latency: bool, energy: bool },
}

impl Feasibility {
    pub fn is_feasible(self) -> bool {
        self == Feasibility::Feasible
    }
}

pub fn check_constraints(latency_ms: f64, energy_j: f64, rc: &RoundConstraints) -> Feasibility {
    let latency = latency_ms > rc.tau_max_ms;
    let energy = energy_j > rc.eps_max_j;
    if latency || energy {
        Feasibility::Infeasible { latency, energy }
    } else {
        Feasibility::Feasible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResolution {
    /// Surviving clients, still in rank order.
    pub kept: Vec<ClientId>,
    /// Removed clients in removal order (lowest utility first).
    pub pruned: Vec<ClientId>,
    pub verdict: Feasibility,
}

/// Drop the lowest-ranked client until `plan(kept)` returns a feasible
/// `(latency_ms, energy_j)` or nobody is left. At most `ranked.len()` drops.
pub fn enforce_constraints<F>(ranked: &[ClientId], rc: &RoundConstraints, mut plan: F) -> ConstraintResolution
where
    F: FnMut(&[ClientId]) -> (f64, f64),
{
    let mut kept = ranked.to_vec();
    let mut pruned = Vec::new();
    loop {
        if kept.is_empty() {
            return ConstraintResolution {
                kept,
                pruned,
                verdict: Feasibility::Feasible,
            };
        }
        let (latency, energy) = plan(&kept);
        let verdict = check_constraints(latency, energy, rc);
        if verdict.is_feasible() {
            return ConstraintResolution { kept, pruned, verdict };
        }
        pruned.extend(kept.pop());
    }
}
