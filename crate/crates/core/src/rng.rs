//! Deterministic random streams keyed by experiment seed, client and round.
//!
//! Every stochastic step draws from a ChaCha8 stream whose seed is a mix of
//! `(experiment_seed, purpose, client, round)`, so results never depend on
//! scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Distinct uses of randomness within one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Partition = 2,
    ModelInit = 3,
    ClientRound = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed derived from a root seed and a sequence of keys.
pub fn derive_seed(root: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(root), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(root: u64, purpose: Purpose, keys: &[u64]) -> Stream {
    let mut all = Vec::with_capacity(keys.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(keys);
    ChaCha8Rng::seed_from_u64(derive_seed(root, &all))
}

/// The stream a client owns for one round.
pub fn client_round_stream(seed: u64, client: usize, round: usize) -> Stream {
    stream(seed, Purpose::ClientRound, &[client as u64, round as u64])
}
