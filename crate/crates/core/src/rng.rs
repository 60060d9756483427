//! Seeded random streams.
//!
//! Every stage draws from ChaCha8 generators keyed by `(seed, stage name)`
//! plus a stream index, so parallel or re-ordered work sees the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Generator for `stage` under the run seed, on sub-stream `stream`.
pub fn stage_rng(seed: u64, stage: &str, stream: u64) -> StageRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
