//! Seeded, counter-based random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a root seed
//! and a tuple of tags (trial, step, user, purpose, ...). Draws for one
//! tuple never depend on how many draws other tuples made, so Monte Carlo
//! runs are reproducible regardless of evaluation order or thread count.

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    DpNoise = 2,
    EnvNoise = 3,
    Corpus = 4,
    MonteCarlo = 5,
    Ratio = 6,
    Trial = 7,
    Single = 8,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a tag tuple into a single 64-bit stream id.
pub fn stream_id(purpose: Purpose, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(purpose as u64), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// ChaCha8 stream keyed by `seed`, with the stream word derived from `tags`.
pub fn stream(seed: u64, purpose: Purpose, tags: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, tags));
    rng
}

/// Derives a child seed, used where a whole sub-computation takes its own root seed.
pub fn derive_seed(seed: u64, purpose: Purpose, tags: &[u64]) -> u64 {
    splitmix64(seed ^ stream_id(purpose, tags))
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open01<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}
