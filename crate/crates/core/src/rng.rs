use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers, so independent consumers of one seed never overlap.
pub(crate) mod stream {
    pub const BLOB_CENTERS: u64 = 1;
    pub const BLOB_SAMPLES: u64 = 2;
    pub const CLASS_SHUFFLE: u64 = 3;
    pub const VALIDATION_SPLIT: u64 = 4;
    pub const TEST_SAMPLES: u64 = 5;
    /// Learner `k` shuffles its batches on stream `LEARNER_BASE + k`.
    pub const LEARNER_BASE: u64 = 1 << 32;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
