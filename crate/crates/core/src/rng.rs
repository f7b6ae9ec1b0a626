//! Independent, seed-derived random streams. Each concern draws from its own
//! stream so that, for example, a hybrid run without a continuum region
//! consumes exactly the same numbers as the pure agent run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Activity = 1,
    Infection = 2,
    Health = 3,
    Coupling = 4,
    Initial = 5,
    Langevin = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
