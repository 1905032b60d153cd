use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

/// Seeded random stream backed by ChaCha8.
///
/// ChaCha8 output is specified bit-for-bit, so a given seed yields the same
/// stream on every platform. Child streams for independent components are
/// obtained with [`SeededRng::fork`], which mixes a label into the seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a named sub-component.
    pub fn fork(&self, label: &str) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    /// Exponential sample with the given rate (mean `1 / rate`).
    pub fn exponential(&mut self, rate: f64) -> f64 {
        Exp::new(rate)
            .expect("exponential rate must be positive")
            .sample(&mut self.inner)
    }

    /// Poisson count with the given mean; zero for non-positive means.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean)
            .expect("poisson mean must be finite")
            .sample(&mut self.inner) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Expands a top-level seed into a per-component seed.
///
/// FNV-1a over the label, xor-ed into the seed, then a SplitMix64 finaliser.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn forks_differ_by_label() {
        let root = SeededRng::new(7);
        let mut x = root.fork("noise");
        let mut y = root.fork("arrivals");
        assert_ne!(x.next_u64(), y.next_u64());
        assert_eq!(root.fork("noise").next_u64(), SeededRng::new(7).fork("noise").next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first draws: guards against silent generator changes.
        let mut r = SeededRng::new(0);
        assert_eq!(r.next_u64(), 13080132717333068652);
        assert_eq!(r.next_u64(), 8594738769458413623);
        assert_eq!(derive_seed(0, "noise"), 9457073664685956747);
        assert_ne!(derive_seed(0, "a"), derive_seed(1, "a"));
    }
}
