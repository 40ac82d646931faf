//! Deterministic random streams.
//!
//! Every randomized operation takes an explicit seed. Operations that share a
//! seed (split, injection, training within one repetition) draw from distinct
//! ChaCha streams so that changing one never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Underrepresent = 2,
    FlipLabels = 3,
    ProxyAdd = 4,
    Synthetic = 5,
    Forest = 6,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
