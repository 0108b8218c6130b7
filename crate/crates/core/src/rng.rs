//! Seeded random streams. Every consumer asks for a named stream of the
//! run seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const NEGATIVES: &str = "negatives";
pub const SPLITS: &str = "splits";
pub const SHUFFLE: &str = "shuffle";
pub const ASSIGN: &str = "assign";
pub const SYNTH: &str = "synth";
pub const BENCH: &str = "bench";

fn stream_id(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The generator for stream `name` of `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
