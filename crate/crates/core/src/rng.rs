use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Deterministic random source with named sub-stream derivation.
///
/// Identical seed and identical call sequence produce bit-identical draws
/// on every platform. Sub-streams are derived by hashing the parent seed
/// with a label (and optional indices), so independent consumers cannot
/// perturb each other's draws.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a64(init: u64, bytes: &[u8]) -> u64 {
    let mut h = init ^ 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator derived from this one's seed and a label.
    pub fn substream(&self, name: &str) -> Rng {
        Rng::new(derive_seed(self.seed, name, &[]))
    }

    /// Independent generator derived from seed, label, and index tuple.
    pub fn substream_indexed(&self, name: &str, indices: &[u64]) -> Rng {
        Rng::new(derive_seed(self.seed, name, indices))
    }

    pub fn next_u64(&mut self) -> u64 {
        RngCore::next_u64(&mut self.inner)
    }

    /// Uniform in [0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Normal(0, std) resampled until within two standard deviations.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let x = self.normal() * std;
            if x.abs() <= 2.0 * std {
                return x;
            }
        }
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        let g = Gamma::new(shape, 1.0).expect("gamma shape must be positive");
        g.sample(&mut self.inner)
    }

    /// Dirichlet(concentration * 1_k) via normalized gamma draws.
    pub fn dirichlet(&mut self, concentration: f64, k: usize) -> Vec<f64> {
        let mut draws: Vec<f64> = (0..k).map(|_| self.gamma(concentration)).collect();
        let mut total: f64 = draws.iter().sum();
        // Gamma(beta) with tiny beta can underflow to an all-zero vector.
        while total <= 0.0 || !total.is_finite() {
            draws = (0..k).map(|_| self.gamma(concentration)).collect();
            total = draws.iter().sum();
        }
        draws.iter_mut().for_each(|d| *d /= total);
        draws
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        use rand::seq::SliceRandom;
        slice.shuffle(&mut self.inner);
    }

    /// k distinct indices from [0, n), ascending.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut ids = rand::seq::index::sample(&mut self.inner, n, k).into_vec();
        ids.sort_unstable();
        ids
    }
}

fn derive_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a64(seed, name.as_bytes());
    for &ix in indices {
        h = fnv1a64(h, &ix.to_le_bytes());
    }
    splitmix64(h)
}
