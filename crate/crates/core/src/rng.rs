//! Seeded, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose-specific stream ids so that, for one seed, baseline draws never
/// shift when an injection or model initialization consumes more numbers.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Baseline = 1,
    Injection = 2,
    ModelInit = 3,
    Training = 4,
    Attribution = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Seed of replication `rep` under a master seed.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    master ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
