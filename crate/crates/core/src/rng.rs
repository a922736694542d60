//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, domain, a, b)` and gets its own ChaCha
//! key, so results never depend on evaluation order and a simulation can be
//! resumed at any round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Scenario = 1,
    Topology = 2,
    Noise = 3,
    Excitation = 4,
    Audit = 5,
}

pub fn stream(seed: u64, domain: Domain, a: u64) -> ChaCha8Rng {
    stream2(seed, domain, a, 0)
}

pub fn stream2(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain as u64, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
