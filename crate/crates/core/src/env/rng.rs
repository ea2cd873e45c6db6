//! Independent, reproducible random streams.
//!
//! Every consumer of randomness (environment instance generation, action
//! sampling, routing decisions, training shuffles) gets its own ChaCha stream
//! keyed by `(master seed, stream tag, episode, member)`, so adding draws to
//! one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Environment,
    Policy,
    Router,
    Training,
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Environment => 0x656e_7669,
            Stream::Policy => 0x706f_6c69,
            Stream::Router => 0x726f_7574,
            Stream::Training => 0x7472_6169,
            Stream::Init => 0x696e_6974,
        }
    }
}

pub fn stream_rng(master: u64, stream: Stream, episode: u64, member: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.tag().to_le_bytes());
    seed[16..24].copy_from_slice(&episode.to_le_bytes());
    seed[24..32].copy_from_slice(&member.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a seed from an ordered list of parts, e.g. `(stage tag, run seed, index)`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &p| mix64(acc ^ mix64(p)))
}
