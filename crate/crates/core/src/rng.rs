//! Seedable, splittable random streams.
//!
//! Every stochastic operation in the crate takes an explicit generator. A
//! generator is identified by a master seed plus a 64-bit stream id; ChaCha8
//! streams with distinct ids are independent, so examples can be generated in
//! any order (or in parallel) and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Dataset partitions get disjoint stream ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Train = 1,
    Validation = 2,
    Test = 3,
    Init = 4,
    Shuffle = 5,
    Baseline = 6,
    Misc = 7,
}

/// Generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for item `index` of a partition.
pub fn stream_for(seed: u64, purpose: Purpose, index: u64) -> Rng {
    substream(seed, ((purpose as u64) << 48) | (index & ((1 << 48) - 1)))
}
