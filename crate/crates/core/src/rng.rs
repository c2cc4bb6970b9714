//! Seed fan-out. Every random draw in a run comes from a ChaCha stream keyed
//! by `(master seed, purpose, client, round)`, so results do not depend on
//! the order in which clients are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into every derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Partition = 1,
    Drift = 2,
    DriftTargets = 3,
    Resources = 4,
    Designation = 5,
    Dropout = 6,
    Noise = 7,
    Replace = 8,
    DpNoise = 9,
    RandomPolicy = 10,
    Jitter = 11,
    Repeat = 12,
    Bench = 13,
}

/// Client slot used for streams that are not tied to one client.
pub const SERVER: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, client: u64, round: u64) -> u64 {
    [stream as u64, client, round]
        .into_iter()
        .fold(splitmix64(master), |acc, part| splitmix64(acc ^ splitmix64(part)))
}

pub fn substream(master: u64, stream: Stream, client: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, client, round))
}
