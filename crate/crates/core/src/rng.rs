//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream whose key
//! is built from `(seed, domain, lane)` and whose stream number is the trial
//! index. A draw therefore depends only on its coordinates, never on the
//! order in which trials or players are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane reserved for randomness shared by all players of a trial.
pub const SHARED_LANE: u64 = u64::MAX;

const KEY_TAG: [u8; 8] = *b"chictr01";

/// The generator for `(seed, domain, trial, lane)`.
pub fn substream(seed: u64, domain: u64, trial: u64, lane: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&lane.to_le_bytes());
    key[24..].copy_from_slice(&KEY_TAG);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}

/// A plain seeded generator for one-shot sampling outside simulations.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    substream(seed, 0, 0, 0)
}
