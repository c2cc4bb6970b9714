//! Function containers, cold/warm invocation delays and the TTL warm pool.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Violation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerStatus {
    #[default]
    NeverInvoked,
    Warm,
    Evicted,
}

/// Lifecycle of one client's training function container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContainerState {
    pub status: ContainerStatus,
    pub last_used_round: Option<u64>,
}

impl ContainerState {
    pub fn warm_at(round: u64) -> Self {
        Self {
            status: ContainerStatus::Warm,
            last_used_round: Some(round),
        }
    }

    /// An invocation right now would pay the cold-start delay.
    pub fn is_cold(&self) -> bool {
        self.status != ContainerStatus::Warm
    }

    pub fn idle_rounds(&self, current_round: u64) -> Option<u64> {
        self.last_used_round.map(|r| current_round.saturating_sub(r))
    }

    /// Tear down a warm container. No effect on containers that never ran.
    pub fn evict(&mut self) -> bool {
        if self.status == ContainerStatus::Warm {
            self.status = ContainerStatus::Evicted;
            true
        } else {
            false
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.status == ContainerStatus::NeverInvoked) == self.last_used_round.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdStartParams {
    pub delta_cold_ms: f64,
    pub delta_warm_ms: f64,
    /// A warm container idle for more than this many rounds is evicted.
    pub warm_ttl_rounds: u64,
    /// Energy penalty charged to the client per cold start.
    pub e_cold_j: f64,
    /// Draw cold delays uniformly from `[0.9, 1.1] * delta_cold_ms`.
    pub jitter: bool,
}

impl Default for ColdStartParams {
    fn default() -> Self {
        Self {
            delta_cold_ms: 2000.0,
            delta_warm_ms: 200.0,
            warm_ttl_rounds: 5,
            e_cold_j: 5.0,
            jitter: false,
        }
    }
}

impl ColdStartParams {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        let finite = self.delta_cold_ms.is_finite() && self.delta_warm_ms.is_finite();
        if !finite || self.delta_warm_ms < 0.0 || self.delta_cold_ms < self.delta_warm_ms {
            out.push(Violation::new(path, "requires delta_cold_ms >= delta_warm_ms >= 0"));
        }
        if self.warm_ttl_rounds < 1 {
            out.push(Violation::new(format!("{path}.warm_ttl_rounds"), "must be >= 1"));
        }
        if !(self.e_cold_j >= 0.0 && self.e_cold_j.is_finite()) {
            out.push(Violation::new(format!("{path}.e_cold_j"), "must be >= 0"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invocation {
    pub delay_ms: f64,
    pub was_cold: bool,
}

/// Delay of the next invocation, leaving the container warm at `current_round`.
pub fn invocation_delay(container: &mut ContainerState, params: &ColdStartParams, current_round: u64) -> Invocation {
    let was_cold = container.is_cold();
    *container = ContainerState::warm_at(current_round);
    Invocation {
        delay_ms: if was_cold {
            params.delta_cold_ms
        } else {
            params.delta_warm_ms
        },
        was_cold,
    }
}

pub fn jittered_cold_delay<R: Rng + ?Sized>(params: &ColdStartParams, rng: &mut R) -> f64 {
    params.delta_cold_ms * rng.random_range(0.9..=1.1)
}

/// Evict every warm container idle for more than `warm_ttl_rounds`.
/// Returns the number of evictions.
pub fn expire_containers<'a, I>(pool: I, current_round: u64, params: &ColdStartParams) -> usize
where
    I: IntoIterator<Item = &'a mut ContainerState>,
{
    pool.into_iter()
        .filter(|c| c.status == ContainerStatus::Warm)
        .filter(|c| c.idle_rounds(current_round).is_some_and(|idle| idle > params.warm_ttl_rounds))
        .map(|c| c.evict())
        .filter(|&evicted| evicted)
        .count()
}

/// Cold-start overhead over a run, kept as two separate dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColdStartOverhead {
    pub delay_ms: f64,
    pub energy_j: f64,
}

impl ColdStartOverhead {
    /// Unit-less sum of both components, for comparison with a combined figure.
    pub fn formal_sum(&self) -> f64 {
        self.delay_ms + self.energy_j
    }
}

impl std::ops::Add for ColdStartOverhead {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            delay_ms: self.delay_ms + rhs.delay_ms,
            energy_j: self.energy_j + rhs.energy_j,
        }
    }
}

pub fn cold_start_overhead(cold_counts_per_round: &[u64], params: &ColdStartParams) -> ColdStartOverhead {
    let total: u64 = cold_counts_per_round.iter().sum();
    ColdStartOverhead {
        delay_ms: total as f64 * params.delta_cold_ms,
        energy_j: total as f64 * params.e_cold_j,
    }
}
