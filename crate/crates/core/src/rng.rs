//! Named, independent ChaCha streams derived from one experiment seed.
//!
//! Every consumer of randomness owns its own stream, so results do not depend
//! on the order in which independent components are advanced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    InterWiring = 1,
    IntraWiring = 2,
    NeuronNoise = 3,
    SignalNoise = 4,
    Sampler = 5,
    Body = 6,
}

pub fn stream_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) ^ index);
    rng
}
