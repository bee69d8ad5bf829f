use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Exp1, StandardNormal};
use rand_pcg::Pcg64;

/// Named sub-streams derived from one experiment seed.
///
/// Each consumer of randomness in a run owns its own stream, so adding draws
/// in one place never shifts the sequence seen by another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Mask,
    Corruption,
    NoiseMatrix,
    Synthetic,
    Split,
    Custom(u64),
}

impl Stream {
    fn id(self) -> u128 {
        match self {
            Stream::Init => 1,
            Stream::Shuffle => 2,
            Stream::Mask => 3,
            Stream::Corruption => 4,
            Stream::NoiseMatrix => 5,
            Stream::Synthetic => 6,
            Stream::Split => 7,
            Stream::Custom(k) => 1 << 64 | k as u128,
        }
    }
}

/// Seeded generator: PCG-XSL-RR 128/64 ("PCG64", O'Neill 2014).
///
/// The algorithm is fixed and platform-independent, so a seed reproduces the
/// same draws everywhere. A single `RngState` must not be shared between
/// threads; fork independent streams with [`RngState::stream`] instead.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: Pcg64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    /// Independent generator for `stream` under the experiment `seed`.
    pub fn stream(seed: u64, stream: Stream) -> Self {
        let state = (u128::from(splitmix64(seed)) << 64) | u128::from(splitmix64(!seed));
        RngState {
            seed,
            inner: Pcg64::new(state, stream.id()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Unit-rate exponential draw.
    pub fn exponential(&mut self) -> f64 {
        self.inner.sample(Exp1)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = RngState::stream(7, Stream::Mask);
        let mut b = RngState::stream(7, Stream::Mask);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = RngState::stream(7, Stream::Mask);
        let mut b = RngState::stream(7, Stream::Shuffle);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    // Pins the generator: a silent change of algorithm or seeding would
    // break reproducibility of every recorded run.
    #[test]
    fn pinned_first_draws() {
        assert_eq!(RngState::new(0).next_u64(), 2354861276966075475);
        assert_eq!(RngState::stream(0, Stream::Init).next_u64(), 4294711589049957685);
        assert_eq!(RngState::stream(0, Stream::Corruption).next_u64(), 146134623126688987);
    }
}
