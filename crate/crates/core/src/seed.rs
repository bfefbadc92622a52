use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` under a master `seed`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const SYNTHETIC: u64 = 0;
    pub const SYNTHETIC_REGRESSION: u64 = 1;
    pub const INIT: u64 = 10;
    pub const SHUFFLE: u64 = 11;
    pub const CORRUPTION: u64 = 12;
    pub const SPLIT: u64 = 13;
    pub const UNLABELED: u64 = 14;
    pub const FOLDS: u64 = 20;
    pub const HOLDOUT: u64 = 21;
}
