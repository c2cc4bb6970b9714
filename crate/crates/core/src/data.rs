//! Synthetic non-IID client data and scheduled distribution drift.
//!
//! Every class is an isotropic unit-variance Gaussian blob around its own
//! center. Clients receive Dirichlet-skewed label proportions; a shard's
//! [`ClassDistribution`] is always its exact empirical label histogram.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{in_unit, ClassDistribution, ClientId, Violation};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub n_classes: usize,
    /// Symmetric Dirichlet concentration; small values give heavy label skew.
    pub concentration: f64,
    pub samples_per_client: usize,
    pub n_features: usize,
    /// Standard deviation of the class centers around the origin.
    pub class_sep: f64,
    /// Size of the balanced held-out evaluation set.
    pub test_samples: usize,
    /// Fixed data seed. When unset the data is derived from the scenario seed.
    pub seed: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            n_clients: 20,
            n_classes: 10,
            concentration: 0.5,
            samples_per_client: 200,
            n_features: 8,
            class_sep: 1.0,
            test_samples: 1000,
            seed: None,
        }
    }
}

impl PartitionConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if self.n_clients == 0 {
            out.push(Violation::new(format!("{path}.n_clients"), "scenario has no clients"));
        }
        if self.n_classes < 2 {
            out.push(Violation::new(format!("{path}.n_classes"), "need at least 2 classes"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            out.push(Violation::new(format!("{path}.concentration"), "must be > 0"));
        }
        if self.samples_per_client == 0 {
            out.push(Violation::new(format!("{path}.samples_per_client"), "must be >= 1"));
        }
        if self.n_features == 0 {
            out.push(Violation::new(format!("{path}.n_features"), "must be >= 1"));
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            out.push(Violation::new(format!("{path}.class_sep"), "must be >= 0"));
        }
        if self.test_samples == 0 {
            out.push(Violation::new(format!("{path}.test_samples"), "must be >= 1"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    #[default]
    ClassShift,
    Imbalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSchedule {
    pub enabled: bool,
    pub period_rounds: u64,
    pub mode: DriftMode,
    pub magnitude: f64,
    /// Fraction of clients (chosen once per run) whose data drifts.
    pub client_fraction: f64,
    /// Explicit drifting clients; overrides `client_fraction`.
    pub clients: Option<Vec<ClientId>>,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            period_rounds: 10,
            mode: DriftMode::ClassShift,
            magnitude: 0.5,
            client_fraction: 0.25,
            clients: None,
        }
    }
}

impl DriftSchedule {
    pub fn check(&self, path: &str, n_clients: usize, out: &mut Vec<Violation>) {
        if self.period_rounds < 1 {
            out.push(Violation::new(format!("{path}.period_rounds"), "must be >= 1"));
        }
        if !(self.magnitude > 0.0 && self.magnitude <= 1.0) {
            out.push(Violation::new(format!("{path}.magnitude"), "must be in (0,1]"));
        }
        if !in_unit(self.client_fraction) {
            out.push(Violation::new(format!("{path}.client_fraction"), "must be in [0,1]"));
        }
        if let Some(ids) = &self.clients {
            if ids.iter().any(|&id| id as usize >= n_clients) && n_clients > 0 {
                out.push(Violation::new(format!("{path}.clients"), "references an unknown client id"));
            }
        }
    }

    pub fn fires_at(&self, round: u64) -> bool {
        self.enabled && round > 0 && round.is_multiple_of(self.period_rounds)
    }

    /// Clients subject to drift for a run with the given master seed.
    pub fn targets(&self, n_clients: usize, seed: u64) -> BTreeSet<ClientId> {
        if let Some(ids) = &self.clients {
            return ids.iter().copied().collect();
        }
        let k = ((self.client_fraction * n_clients as f64).round() as usize).min(n_clients);
        let mut rng = substream(seed, Stream::DriftTargets, 0, 0);
        index::sample(&mut rng, n_clients, k).into_iter().map(|i| i as ClientId).collect()
    }
}

/// Labeled samples held by one client (or the evaluation set).
/// Features are row-major, `n_features` per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledShard {
    pub n_features: usize,
    pub n_classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledShard {
    pub fn empty(n_features: usize, n_classes: usize) -> Self {
        Self {
            n_features,
            n_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        debug_assert_eq!(x.len(), self.n_features);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distribution(&self) -> ClassDistribution {
        ClassDistribution::from_counts(&self.class_counts())
    }

    /// One header line, then `label,f1,...,ff` per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((1..=self.n_features).map(|j| format!("f{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = std::iter::once(self.labels[i].to_string())
                .chain(self.row(i).iter().map(|x| x.to_string()))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Class centers of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobModel {
    pub centers: Vec<Vec<f64>>,
}

impl BlobModel {
    pub fn generate<R: Rng + ?Sized>(n_classes: usize, n_features: usize, class_sep: f64, rng: &mut R) -> Self {
        let centers = (0..n_classes)
            .map(|_| {
                (0..n_features)
                    .map(|_| class_sep * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { centers }
    }

    pub fn n_features(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn sample<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        self.centers[class]
            .iter()
            .map(|c| c + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// A shard with exactly `counts[k]` samples of class `k`, in class order.
    pub fn shard<R: Rng + ?Sized>(&self, counts: &[usize], rng: &mut R) -> LabeledShard {
        let mut shard = LabeledShard::empty(self.n_features(), self.centers.len());
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                let x = self.sample(k, rng);
                shard.push(&x, k);
            }
        }
        shard
    }
}

/// Split `n` into integer counts proportional to `probs` (largest remainder,
/// ties to the lower index). Counts sum to `n` and each is within 1 of `n·p`.
pub fn apportion(n: usize, probs: &[f64]) -> Vec<usize> {
    let total: f64 = probs.iter().sum();
    let exact: Vec<f64> = probs.iter().map(|p| n as f64 * p / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // Every gamma draw underflowed: put all mass on one class.
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub blobs: BlobModel,
    pub shards: Vec<LabeledShard>,
    pub distributions: Vec<ClassDistribution>,
    /// Class-balanced evaluation set.
    pub test: LabeledShard,
}

/// Dirichlet label-skewed shards for every client plus a balanced test set.
pub fn partition_non_iid(cfg: &PartitionConfig, seed: u64) -> Partition {
    let mut rng = substream(seed, Stream::Partition, crate::rng::SERVER, 0);
    let blobs = BlobModel::generate(cfg.n_classes, cfg.n_features, cfg.class_sep, &mut rng);
    let mut shards = Vec::with_capacity(cfg.n_clients);
    let mut distributions = Vec::with_capacity(cfg.n_clients);
    for client in 0..cfg.n_clients {
        let mut crng = substream(seed, Stream::Partition, client as u64, 0);
        let props = dirichlet(cfg.n_classes, cfg.concentration, &mut crng);
        let counts = apportion(cfg.samples_per_client, &props);
        let shard = blobs.shard(&counts, &mut crng);
        distributions.push(shard.distribution());
        shards.push(shard);
    }
    let balanced = apportion(cfg.test_samples, &vec![1.0; cfg.n_classes]);
    let test = blobs.shard(&balanced, &mut rng);
    Partition {
        blobs,
        shards,
        distributions,
        test,
    }
}

/// Rebuild `shard` so that its label histogram becomes `target` counts,
/// keeping existing samples where possible and drawing new ones from the blobs.
fn reshape_to_counts<R: Rng + ?Sized>(shard: &LabeledShard, target: &[usize], blobs: &BlobModel, rng: &mut R) -> LabeledShard {
    let mut kept = vec![0usize; shard.n_classes];
    let mut out = LabeledShard::empty(shard.n_features, shard.n_classes);
    for i in 0..shard.len() {
        let l = shard.labels[i];
        if kept[l] < target[l] {
            kept[l] += 1;
            out.push(shard.row(i), l);
        }
    }
    for k in 0..shard.n_classes {
        for _ in kept[k]..target[k] {
            let x = blobs.sample(k, rng);
            out.push(&x, k);
        }
    }
    out
}

/// Apply the drift event scheduled for `round`, if any.
///
/// `ClassShift` picks `round(magnitude·K)` classes and moves their samples to
/// the next class cyclically, redrawing features from the new class blob.
/// `Imbalance` mixes `magnitude` of probability mass onto one random class.
pub fn apply_drift<R: Rng + ?Sized>(
    shard: &LabeledShard,
    round: u64,
    schedule: &DriftSchedule,
    blobs: &BlobModel,
    rng: &mut R,
) -> (LabeledShard, ClassDistribution) {
    if !schedule.fires_at(round) || shard.is_empty() {
        return (shard.clone(), shard.distribution());
    }
    let k = shard.n_classes;
    let drifted = match schedule.mode {
        DriftMode::ClassShift => {
            let m = ((schedule.magnitude * k as f64).round() as usize).clamp(1, k);
            let shifted: BTreeSet<usize> = index::sample(rng, k, m).into_iter().collect();
            let mut out = LabeledShard::empty(shard.n_features, k);
            for i in 0..shard.len() {
                let l = shard.labels[i];
                if shifted.contains(&l) {
                    let nl = (l + 1) % k;
                    let x = blobs.sample(nl, rng);
                    out.push(&x, nl);
                } else {
                    out.push(shard.row(i), l);
                }
            }
            out
        }
        DriftMode::Imbalance => {
            let hot = rng.random_range(0..k);
            let current = shard.distribution();
            let target: Vec<f64> = current
                .probs()
                .iter()
                .enumerate()
                .map(|(c, &p)| (1.0 - schedule.magnitude) * p + if c == hot { schedule.magnitude } else { 0.0 })
                .collect();
            let counts = apportion(shard.len(), &target);
            reshape_to_counts(shard, &counts, blobs, rng)
        }
    };
    let dist = drifted.distribution();
    (drifted, dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::health::{kl_divergence, DriftConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n_clients: usize, concentration: f64) -> PartitionConfig {
        PartitionConfig {
            n_clients,
            concentration,
            ..Default::default()
        }
    }

    #[test]
    fn high_concentration_is_near_uniform() {
        let p = partition_non_iid(&cfg(10, 1e6), 1);
        for d in &p.distributions {
            assert!(d.probs().iter().all(|&x| (x - 0.1).abs() <= 0.02), "{:?}", d.probs());
        }
    }

    #[test]
    fn low_concentration_is_skewed() {
        for seed in 0..10 {
            let p = partition_non_iid(&cfg(20, 0.1), seed);
            let max = p
                .distributions
                .iter()
                .map(|d| d.probs().iter().cloned().fold(0.0, f64::max))
                .fold(0.0, f64::max);
            assert!(max > 0.5, "seed {seed}: max class prob {max}");
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let c = cfg(5, 0.5);
        assert_eq!(partition_non_iid(&c, 3), partition_non_iid(&c, 3));
        assert_ne!(partition_non_iid(&c, 3).shards, partition_non_iid(&c, 4).shards);
    }

    #[test]
    fn shards_have_requested_shape() {
        let p = partition_non_iid(&cfg(4, 0.3), 8);
        for (s, d) in p.shards.iter().zip(&p.distributions) {
            assert_eq!(s.len(), 200);
            assert_eq!(s.features.len(), 200 * 8);
            assert!(s.labels.iter().all(|&l| l < 10));
            assert_eq!(&s.distribution(), d);
        }
        assert_eq!(p.test.class_counts(), vec![100; 10]);
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(apportion(3, &[1.0, 1.0]), vec![2, 1]);
        assert_eq!(apportion(7, &[0.0, 1.0, 0.0]), vec![0, 7, 0]);
    }

    fn schedule(mode: DriftMode, magnitude: f64) -> DriftSchedule {
        DriftSchedule {
            mode,
            magnitude,
            period_rounds: 10,
            ..Default::default()
        }
    }

    #[test]
    fn drift_only_on_period() {
        let p = partition_non_iid(&cfg(1, 1.0), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = schedule(DriftMode::ClassShift, 1.0);
        let (out, _) = apply_drift(&p.shards[0], 7, &s, &p.blobs, &mut rng);
        assert_eq!(out, p.shards[0]);
        let (out, _) = apply_drift(&p.shards[0], 0, &s, &p.blobs, &mut rng);
        assert_eq!(out, p.shards[0]);
    }

    #[test]
    fn full_class_shift_rotates_every_label() {
        let p = partition_non_iid(&cfg(1, 1.0), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, dist) = apply_drift(&p.shards[0], 10, &schedule(DriftMode::ClassShift, 1.0), &p.blobs, &mut rng);
        for (a, b) in p.shards[0].labels.iter().zip(&out.labels) {
            assert_eq!(*b, (a + 1) % 10);
        }
        let before = p.distributions[0].probs();
        for k in 0..10 {
            assert_eq!(dist.probs()[(k + 1) % 10], before[k]);
        }
    }

    #[test]
    fn imbalance_on_uniform_binary() {
        let blobs = BlobModel::generate(2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let shard = blobs.shard(&[50, 50], &mut ChaCha8Rng::seed_from_u64(1));
        let (_, dist) = apply_drift(&shard, 10, &schedule(DriftMode::Imbalance, 0.5), &blobs, &mut ChaCha8Rng::seed_from_u64(2));
        let p = dist.probs();
        assert!(p == [0.75, 0.25] || p == [0.25, 0.75], "{p:?}");
    }

    #[test]
    fn drift_targets() {
        let s = DriftSchedule { clients: Some(vec![3, 1]), ..Default::default() };
        assert_eq!(s.targets(10, 0), BTreeSet::from([1, 3]));
        let s = DriftSchedule { client_fraction: 0.3, ..Default::default() };
        assert_eq!(s.targets(10, 5).len(), 3);
        assert_eq!(s.targets(10, 5), s.targets(10, 5));
    }

    #[test]
    fn csv_dump_layout() {
        let blobs = BlobModel::generate(2, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let shard = blobs.shard(&[1, 2], &mut ChaCha8Rng::seed_from_u64(1));
        let mut buf = Vec::new();
        shard.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "label,f1,f2");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[3].starts_with("1,"));
        assert_eq!(lines[2].split(',').count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn drifted_distribution_matches_labels(
            seed in any::<u64>(),
            conc in 0.05f64..5.0,
            magnitude in 0.05f64..=1.0,
            imbalance in any::<bool>(),
        ) {
            let c = PartitionConfig { n_clients: 2, samples_per_client: 60, n_classes: 5, concentration: conc, ..Default::default() };
            let p = partition_non_iid(&c, seed);
            let mode = if imbalance { DriftMode::Imbalance } else { DriftMode::ClassShift };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, dist) = apply_drift(&p.shards[0], 20, &schedule(mode, magnitude), &p.blobs, &mut rng);
            prop_assert_eq!(out.len(), 60);
            prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let emp = ClassDistribution::from_labels(&out.labels, 5);
            for (a, b) in emp.probs().iter().zip(dist.probs()) {
                prop_assert!((a - b).abs() <= 1.0 / 60.0);
            }
        }

        #[test]
        fn drift_detection_links_to_injection(seed in any::<u64>(), magnitude in 0.3f64..=1.0) {
            let c = PartitionConfig { n_clients: 1, concentration: 1e3, ..Default::default() };
            let p = partition_non_iid(&c, seed);
            let dc = DriftConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = schedule(DriftMode::Imbalance, magnitude);
            let (same, d_same) = apply_drift(&p.shards[0], 9, &s, &p.blobs, &mut rng);
            prop_assert!(kl_divergence(&d_same, &p.distributions[0], &dc).unwrap() < 1e-6);
            let (_, d_new) = apply_drift(&same, 10, &s, &p.blobs, &mut rng);
            prop_assert!(kl_divergence(&d_new, &d_same, &dc).unwrap() > 0.01);
        }
    }
}
