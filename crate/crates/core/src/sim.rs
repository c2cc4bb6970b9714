//! The synchronous round loop.
//!
//! Each round runs, in order: container housekeeping, drift injection,
//! health/drift scoring, policy selection and ranking, constraint pruning,
//! serverless invocation with adversarial behaviour and local training,
//! optional DP, FedAvg, evaluation, and energy accounting with threshold
//! decay. All randomness comes from [`crate::rng::substream`] keyed by
//! `(seed, purpose, client, round)`.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::adversary::{designate, flip_labels, inject_noise, maybe_dropout, replace_model};
use crate::config::{EnergyModel, ScenarioConfig};
use crate::data::{apply_drift, partition_non_iid, BlobModel, LabeledShard};
use crate::error::Result;
use crate::learner::{fed_avg, model_dim, train_time_ms, BuiltinLearner, ClientUpdate, Learner, TrainingConfig};
use crate::model::{AttackRole, ClientId, ClientNode, ModelVector, ResourceSnapshot, Violation};
use crate::privacy::{add_dp_noise, clip_update, epsilon, DpPoint};
use crate::rng::{derive_seed, substream, Stream, SERVER};
use crate::scheduler::{
    enforce_constraints, fedfog_schedule, naive_schedule, normalize_to_bound, objective_value, random_schedule,
    score_client, update_energy_threshold, BudgetAverage, ClientScores, PolicyKind,
};
use crate::serverless::{expire_containers, invocation_delay, jittered_cold_delay, ColdStartParams};
use crate::telemetry::{ClientTrace, RoundRecord};

/// Timing components of one participating client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientTiming {
    pub invocation_delay_ms: f64,
    pub train_time_ms: f64,
    pub comm_ms: f64,
}

impl ClientTiming {
    pub fn total(&self) -> f64 {
        self.invocation_delay_ms + self.train_time_ms + self.comm_ms
    }
}

/// Straggler-bound latency of a synchronous round: slowest client plus
/// aggregation. An empty round takes no time.
pub fn round_latency(timings: &[ClientTiming], aggregation_ms: f64) -> f64 {
    if timings.is_empty() {
        return 0.0;
    }
    timings.iter().map(ClientTiming::total).fold(f64::NEG_INFINITY, f64::max) + aggregation_ms
}

/// `c_cpu·compute + c_tx·bytes`, plus the cold-start penalty when applicable.
pub fn client_energy(compute_units: f64, tx_bytes: f64, was_cold: bool, model: &EnergyModel, e_cold_j: f64) -> f64 {
    model.c_cpu * compute_units + model.c_tx * tx_bytes + if was_cold { e_cold_j } else { 0.0 }
}

fn compute_units(training: &TrainingConfig, n_samples: usize) -> f64 {
    (training.epochs * n_samples) as f64
}

/// Pre-built simulation inputs, for scenarios that inject their own fleet.
#[derive(Debug, Clone)]
pub struct SimParts {
    pub clients: Vec<ClientNode>,
    pub shards: Vec<LabeledShard>,
    pub test: LabeledShard,
    pub blobs: BlobModel,
    pub global: ModelVector,
}

pub struct SimState {
    config: ScenarioConfig,
    /// Index of the next round to run.
    pub round: u64,
    pub clients: Vec<ClientNode>,
    pub shards: Vec<LabeledShard>,
    pub test: LabeledShard,
    pub blobs: BlobModel,
    pub global: ModelVector,
    /// Drift scores that replace the measured KL for the listed clients.
    pub drift_overrides: BTreeMap<ClientId, f64>,
    /// Cumulative joules deducted from each client's battery.
    pub energy_spent_j: Vec<f64>,
    base_resources: Vec<(f64, f64)>,
    drift_targets: BTreeSet<ClientId>,
    index: BTreeMap<ClientId, usize>,
    learner: Box<dyn Learner>,
}

impl std::fmt::Debug for SimState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimState")
            .field("round", &self.round)
            .field("clients", &self.clients.len())
            .field("dim", &self.global.dim())
            .finish_non_exhaustive()
    }
}

impl SimState {
    /// Build the fleet and data for a validated scenario.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let config = config.validated()?;
        let seed = config.seed;
        let p = &config.partition;
        let data = partition_non_iid(p, p.seed.unwrap_or(seed));
        let fleet = config.fleet;
        let ids: Vec<ClientId> = (0..p.n_clients as ClientId).collect();
        let mut designation_rng = substream(config.attack.seed.unwrap_or(seed), Stream::Designation, SERVER, 0);
        let roles = designate(&ids, &config.attack, &mut designation_rng);

        let clients = ids
            .iter()
            .zip(&data.distributions)
            .zip(&data.shards)
            .map(|((&id, dist), shard)| {
                let mut rng = substream(seed, Stream::Resources, id as u64, SERVER);
                let cpu = rng.random_range(fleet.cpu_min..=fleet.cpu_max);
                let mem = rng.random_range(fleet.mem_min..=fleet.mem_max);
                let energy = rng.random_range(fleet.energy_min..=fleet.energy_max);
                ClientNode {
                    id,
                    resources: ResourceSnapshot::new(cpu, mem, energy),
                    energy_level: energy,
                    energy_threshold: config.policy.thresholds.theta_e,
                    dataset_size: shard.len(),
                    class_dist: dist.clone(),
                    prev_class_dist: None,
                    container: Default::default(),
                    adversary: roles[&id],
                }
            })
            .collect();
        let global = ModelVector::zeros(model_dim(p.n_features, p.n_classes));
        let parts = SimParts {
            clients,
            shards: data.shards,
            test: data.test,
            blobs: data.blobs,
            global,
        };
        Self::from_parts(config, parts)
    }

    pub fn from_parts(config: ScenarioConfig, parts: SimParts) -> Result<Self> {
        let config = config.validated()?;
        let drift_targets = config.drift.targets(parts.clients.len(), config.seed);
        let base_resources = parts.clients.iter().map(|c| (c.resources.cpu, c.resources.mem)).collect();
        let index = parts.clients.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        Ok(Self {
            energy_spent_j: vec![0.0; parts.clients.len()],
            config,
            round: 0,
            clients: parts.clients,
            shards: parts.shards,
            test: parts.test,
            blobs: parts.blobs,
            global: parts.global,
            drift_overrides: BTreeMap::new(),
            base_resources,
            drift_targets,
            index,
            learner: Box::new(BuiltinLearner),
        })
    }

    pub fn with_learner(mut self, learner: Box<dyn Learner>) -> Self {
        self.learner = learner;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn drift_targets(&self) -> &BTreeSet<ClientId> {
        &self.drift_targets
    }

    pub fn client(&self, id: ClientId) -> Option<&ClientNode> {
        self.index.get(&id).map(|&i| &self.clients[i])
    }

    /// Invariant failures in the current state; empty when consistent.
    pub fn check_invariants(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (c, s) in self.clients.iter().zip(&self.shards) {
            c.check(&mut out);
            if !s.is_empty() && c.dataset_size != s.len() {
                out.push(Violation::new(format!("client[{}].dataset_size", c.id), "differs from shard size"));
            }
            if !s.is_empty() && c.class_dist.num_classes() == s.n_classes {
                let emp = s.distribution();
                let tol = 1.0 / s.len() as f64;
                if emp.probs().iter().zip(c.class_dist.probs()).any(|(a, b)| (a - b).abs() > tol) {
                    out.push(Violation::new(format!("client[{}].class_dist", c.id), "does not match shard labels"));
                }
            }
        }
        if !self.global.is_finite() {
            out.push(Violation::new("global", "non-finite weights"));
        }
        out
    }

    /// Predicted `(latency_ms, energy_j)` if `set` were invoked this round.
    fn plan(&self, set: &[ClientId]) -> (f64, f64) {
        let cfg = &self.config;
        let comm = cfg.energy_model.comm_ms();
        let mut energy = 0.0;
        let timings: Vec<ClientTiming> = set
            .iter()
            .map(|id| {
                let i = self.index[id];
                let c = &self.clients[i];
                let n = self.shards[i].len();
                let cold = c.container.is_cold();
                energy += client_energy(
                    compute_units(&cfg.training, n),
                    cfg.energy_model.payload_bytes,
                    cold,
                    &cfg.energy_model,
                    cfg.cold_start.e_cold_j,
                );
                ClientTiming {
                    invocation_delay_ms: predicted_delay(&cfg.cold_start, cold),
                    train_time_ms: train_time_ms(&cfg.training, n, c.resources.cpu),
                    comm_ms: comm,
                }
            })
            .collect();
        (round_latency(&timings, cfg.fleet.aggregation_ms), energy)
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let cfg = self.config.clone();
        let round = self.round;
        let seed = cfg.seed;

        // Container housekeeping. The naive baseline redeploys every function.
        match cfg.policy.kind {
            PolicyKind::NaiveFaas => self.clients.iter_mut().for_each(|c| {
                c.container.evict();
            }),
            _ => {
                expire_containers(self.clients.iter_mut().map(|c| &mut c.container), round, &cfg.cold_start);
            }
        }

        // Drift injection; the pre-drift distribution becomes last round's.
        for (i, client) in self.clients.iter_mut().enumerate() {
            let previous = client.class_dist.clone();
            if cfg.drift.fires_at(round) && self.drift_targets.contains(&client.id) {
                let mut rng = substream(seed, Stream::Drift, client.id as u64, round);
                let (shard, dist) = apply_drift(&self.shards[i], round, &cfg.drift, &self.blobs, &mut rng);
                client.dataset_size = shard.len().max(1);
                client.class_dist = dist;
                self.shards[i] = shard;
            }
            client.prev_class_dist = Some(previous);
        }

        // Resource fluctuation and scoring.
        let jitter = cfg.fleet.resource_jitter;
        if jitter > 0.0 {
            for (client, &(cpu, mem)) in self.clients.iter_mut().zip(&self.base_resources) {
                let mut rng = substream(seed, Stream::Resources, client.id as u64, round);
                client.resources.cpu = (cpu * (1.0 + jitter * rng.random_range(-1.0..=1.0))).clamp(0.0, 1.0);
                client.resources.mem = (mem * (1.0 + jitter * rng.random_range(-1.0..=1.0))).clamp(0.0, 1.0);
            }
        }
        let scores: Vec<ClientScores> = self
            .clients
            .iter()
            .map(|c| {
                let mut s = score_client(c, &cfg.health_weights, &cfg.drift_detection);
                if let Some(&d) = self.drift_overrides.get(&c.id) {
                    s.drift = d;
                }
                s
            })
            .collect();
        let utilities: BTreeMap<ClientId, f64> =
            scores.iter().map(|s| (s.id, s.utility(&cfg.policy.utility_weights))).collect();
        let thresholds = cfg.policy.thresholds;
        let eligible: BTreeSet<ClientId> = scores.iter().filter(|s| s.is_eligible(&thresholds)).map(|s| s.id).collect();
        let ids: Vec<ClientId> = self.clients.iter().map(|c| c.id).collect();

        // Selection, ranking and constraint pruning.
        let (selected, pruned) = match cfg.policy.kind {
            PolicyKind::Fedfog => {
                let ranked = fedfog_schedule(&scores, &thresholds, &cfg.policy.utility_weights, cfg.policy.top_k);
                let res = enforce_constraints(&ranked.selected, &cfg.constraints, |set| self.plan(set));
                (res.kept, res.pruned)
            }
            PolicyKind::NaiveFaas => (naive_schedule(&ids).selected, Vec::new()),
            PolicyKind::Random => {
                let k = cfg.policy.top_k.unwrap_or(eligible.len()).min(ids.len());
                let mut rng = substream(seed, Stream::RandomPolicy, SERVER, round);
                (random_schedule(&ids, k, &mut rng)?.selected, Vec::new())
            }
        };

        // Serverless invocation, adversarial behaviour and local training.
        let attack = cfg.attack;
        let comm_ms = cfg.energy_model.comm_ms();
        let mut updates: Vec<ClientUpdate> = Vec::with_capacity(selected.len());
        let mut timings = Vec::with_capacity(selected.len());
        let mut spent: BTreeMap<ClientId, f64> = BTreeMap::new();
        let mut invocations = BTreeMap::new();
        let mut dropped = Vec::new();
        let mut cold_starts = 0u64;
        for &id in &selected {
            let i = self.index[&id];
            let role = self.clients[i].adversary;
            let drops = role == AttackRole::Dropout
                && !maybe_dropout(attack.dropout_prob, &mut substream(seed, Stream::Dropout, id as u64, round));
            if drops && !attack.drop_after_invoke {
                dropped.push(id);
                continue;
            }
            let mut inv = invocation_delay(&mut self.clients[i].container, &cfg.cold_start, round);
            if inv.was_cold {
                cold_starts += 1;
                if cfg.cold_start.jitter {
                    inv.delay_ms = jittered_cold_delay(&cfg.cold_start, &mut substream(seed, Stream::Jitter, id as u64, round));
                }
            }
            invocations.insert(id, inv);
            let penalty = cfg.cold_start.e_cold_j;
            if drops {
                spent.insert(id, client_energy(0.0, 0.0, inv.was_cold, &cfg.energy_model, penalty));
                dropped.push(id);
                continue;
            }

            let shard: Cow<'_, LabeledShard> = if role == AttackRole::LabelFlip {
                Cow::Owned(flip_labels(&self.shards[i], self.shards[i].n_classes))
            } else {
                Cow::Borrowed(&self.shards[i])
            };
            let weights = self.learner.train(id, &self.global, &shard, &cfg.training)?;
            let n = shard.len();
            let mut update = ClientUpdate {
                client_id: id,
                delta: weights,
                dataset_size: self.clients[i].dataset_size,
                train_time_ms: train_time_ms(&cfg.training, n, self.clients[i].resources.cpu),
            };
            match role {
                AttackRole::Noise => {
                    let mut rng = substream(seed, Stream::Noise, id as u64, round);
                    update = inject_noise(&update, attack.noise_sigma, &mut rng);
                }
                AttackRole::Replace => {
                    let mut rng = substream(seed, Stream::Replace, id as u64, round);
                    update = replace_model(&update, &mut rng, attack.replace_scale);
                }
                _ => {}
            }
            timings.push(ClientTiming {
                invocation_delay_ms: inv.delay_ms,
                train_time_ms: update.train_time_ms,
                comm_ms,
            });
            spent.insert(
                id,
                client_energy(
                    compute_units(&cfg.training, n),
                    cfg.energy_model.payload_bytes,
                    inv.was_cold,
                    &cfg.energy_model,
                    penalty,
                ),
            );
            updates.push(update);
        }

        // Differential privacy: clip each client's change to the global model.
        let dp = cfg.dp;
        if dp.enabled {
            for u in &mut updates {
                let clipped = clip_update(&u.delta.sub(&self.global), dp.clip_s);
                u.delta = self.global.add(&clipped);
                if dp.point == DpPoint::Client {
                    let mut rng = substream(seed, Stream::DpNoise, u.client_id as u64, round);
                    u.delta = add_dp_noise(&u.delta, dp.sigma, &mut rng);
                }
            }
        }

        // Aggregation in ascending id order.
        updates.sort_by_key(|u| u.client_id);
        if !updates.is_empty() {
            let mut aggregate = fed_avg(&updates)?;
            if dp.enabled && dp.point == DpPoint::Server {
                let mut rng = substream(seed, Stream::DpNoise, SERVER, round);
                aggregate = add_dp_noise(&aggregate, dp.sigma, &mut rng);
            }
            self.global = aggregate;
        }
        let eps = (dp.enabled && !updates.is_empty()).then(|| epsilon(dp.sigma, dp.clip_s, updates.len(), dp.dp_delta));
        let accuracy = self.learner.evaluate(&self.global, &self.test)?;

        // Energy accounting: deduct from batteries, then decay thresholds.
        let capacity = cfg.fleet.battery_capacity_j;
        let mut per_client_energy_j = BTreeMap::new();
        for (&id, &joules) in &spent {
            let i = self.index[&id];
            let c = &mut self.clients[i];
            let deducted = joules.min(c.energy_level * capacity);
            c.energy_level = (c.energy_level - deducted / capacity).max(0.0);
            c.resources.batt = (c.resources.batt - deducted / capacity).max(0.0);
            self.energy_spent_j[i] += deducted;
            per_client_energy_j.insert(id, deducted);
        }
        let energy_j: f64 = per_client_energy_j.values().sum();
        let avg_over = match cfg.energy_budget.budget_avg {
            BudgetAverage::All => self.clients.len(),
            BudgetAverage::Selected => per_client_energy_j.len(),
        };
        if avg_over > 0 && energy_j > 0.0 {
            let avg = energy_j / avg_over as f64;
            for c in &mut self.clients {
                let used = per_client_energy_j.get(&c.id).copied().unwrap_or(0.0);
                c.energy_threshold = update_energy_threshold(c.energy_threshold, used, avg, &cfg.energy_budget)?;
            }
        }

        let latency_ms = round_latency(&timings, cfg.fleet.aggregation_ms);
        let mean_utility = if selected.is_empty() {
            0.0
        } else {
            selected.iter().map(|id| utilities[id]).sum::<f64>() / selected.len() as f64
        };
        let objective_j = objective_value(
            accuracy,
            normalize_to_bound(latency_ms, cfg.constraints.tau_max_ms),
            normalize_to_bound(energy_j, cfg.constraints.eps_max_j),
            &cfg.objective,
        );
        let clients = scores
            .iter()
            .map(|s| {
                let inv = invocations.get(&s.id);
                ClientTrace {
                    id: s.id,
                    health: s.health,
                    energy_level: s.energy,
                    drift: s.drift,
                    utility: utilities[&s.id],
                    eligible: eligible.contains(&s.id),
                    energy_threshold: self.clients[self.index[&s.id]].energy_threshold,
                    invocation_delay_ms: inv.map(|v| v.delay_ms),
                    was_cold: inv.map(|v| v.was_cold),
                }
            })
            .collect();

        self.round += 1;
        Ok(RoundRecord {
            round,
            selected_ids: selected,
            dropped_ids: dropped,
            pruned_ids: pruned,
            latency_ms,
            energy_j,
            cold_starts,
            accuracy,
            mean_utility,
            objective_j,
            epsilon: eps,
            per_client_energy_j,
            clients,
        })
    }

    pub fn run(&mut self, rounds: u64) -> Result<Vec<RoundRecord>> {
        (0..rounds).map(|_| self.run_round()).collect()
    }
}

fn predicted_delay(params: &ColdStartParams, cold: bool) -> f64 {
    if cold {
        params.delta_cold_ms
    } else {
        params.delta_warm_ms
    }
}

/// Run every round of a scenario.
pub fn run_simulation(config: &ScenarioConfig) -> Result<Vec<RoundRecord>> {
    let mut state = SimState::new(config.clone())?;
    state.run(config.rounds)
}

/// Seed for the `repeat`-th independent replication of a scenario.
pub fn repeat_seed(seed: u64, repeat: u64) -> u64 {
    derive_seed(seed, Stream::Repeat, SERVER, repeat)
}
