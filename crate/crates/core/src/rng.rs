//! Derived random streams. Every stochastic step draws from a stream that is
//! a pure function of `(global seed, stage, dialog id, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

pub fn stream(seed: u64, stage: &str, dialog_id: &str, index: u64) -> StageRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(dialog_id.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Hex SHA-256 of a sequence of strings (NUL-separated).
pub fn digest<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for s in items {
        h.update(s.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
