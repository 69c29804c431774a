use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchError;

/// Skew used by YCSB's zipfian request generator.
pub const DEFAULT_THETA: f64 = 0.99;

/// Generalized harmonic number `sum_{i=1..n} 1 / i^theta`.
pub fn zeta(n: usize, theta: f64) -> f64 {
    (1..=n).map(|i| (i as f64).powf(-theta)).sum()
}

/// Zipfian law over ranks `0..items`, where rank `i` has weight `1/(i+1)^theta`.
///
/// Sampling inverts the cumulative weight table exactly, so each draw costs
/// one uniform variate and a binary search.
#[derive(Debug, Clone)]
pub struct Zipfian {
    theta: f64,
    zeta: f64,
    cumulative: Vec<f64>,
}

impl Zipfian {
    pub fn new(items: usize, theta: f64) -> Result<Self, BenchError> {
        if items == 0 {
            return Err(BenchError::Config("zipfian needs at least one item".into()));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(BenchError::Config(format!("zipfian theta {theta} outside (0, 1)")));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = (1..=items)
            .map(|i| {
                acc += (i as f64).powf(-theta);
                acc
            })
            .collect();
        Ok(Zipfian {
            theta,
            zeta: acc,
            cumulative,
        })
    }

    pub fn items(&self) -> usize {
        self.cumulative.len()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn pmf(&self, rank: usize) -> f64 {
        if rank >= self.items() {
            return 0.0;
        }
        ((rank + 1) as f64).powf(-self.theta) / self.zeta
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.gen::<f64>() * self.zeta;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.items() - 1)
    }
}

/// A [`Zipfian`] law paired with its own seeded generator.
#[derive(Debug, Clone)]
pub struct ZipfianGenerator {
    law: Zipfian,
    rng: ChaCha8Rng,
}

impl ZipfianGenerator {
    pub fn new(items: usize, theta: f64, seed: u64) -> Result<Self, BenchError> {
        Ok(ZipfianGenerator {
            law: Zipfian::new(items, theta)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn law(&self) -> &Zipfian {
        &self.law
    }

    pub fn next_index(&mut self) -> usize {
        self.law.sample(&mut self.rng)
    }
}
