use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream labels handed to [`Rng::split`]. Each pipeline stage draws from its
/// own stream so that reordering stages leaves the other stages' data intact.
pub mod streams {
    pub const WORLD: u64 = 0x01;
    pub const TRAIN_SPLIT: u64 = 0x02;
    pub const EVAL_SPLIT: u64 = 0x03;
    pub const KMEANS: u64 = 0x10;
    pub const HEAD: u64 = 0x20;
    pub const STAGE_ONE: u64 = 0x31;
    pub const STAGE_TWO: u64 = 0x32;
    pub const INIT: u64 = 0x33;
    pub const PROBE: u64 = 0x40;
}

/// Seeded ChaCha8 generator with deterministic stream splitting.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Depends only on this generator's seed and
    /// `stream`, never on how many values have been drawn so far.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0xA5A5_5A5A))))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    /// `m` distinct indices from `0..n` (uniform, without replacement).
    pub fn sample_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, m).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
