//! Estimators with standard errors and binomial tolerances.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[inline]
fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 converts to the scalar type")
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accumulator<T> {
    n: u64,
    mean: T,
    m2: T,
}

impl<T: Float> Default for Accumulator<T> {
    fn default() -> Self {
        Self { n: 0, mean: T::zero(), m2: T::zero() }
    }
}

impl<T: Float> Accumulator<T> {
    pub fn push(&mut self, x: T) {
        self.n += 1;
        let d = x - self.mean;
        self.mean = self.mean + d / cast(self.n as f64);
        self.m2 = self.m2 + d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        if self.n < 2 {
            T::zero()
        } else {
            self.m2 / cast((self.n - 1) as f64)
        }
    }

    pub fn estimate(&self) -> Estimate<T> {
        let se = if self.n == 0 { T::zero() } else { (self.variance() / cast(self.n as f64)).sqrt() };
        Estimate::new(self.n, self.mean, se)
    }
}

/// Mean with standard error and a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub n: u64,
    pub mean: T,
    pub std_err: T,
    pub lo95: T,
    pub hi95: T,
}

impl<T: Float> Estimate<T> {
    pub fn new(n: u64, mean: T, std_err: T) -> Self {
        let h = std_err * cast(1.959_963_984_540_054);
        Self { n, mean, std_err, lo95: mean - h, hi95: mean + h }
    }

    pub fn from_samples(xs: &[T]) -> Self {
        let mut acc = Accumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }
}

/// Binomial proportion `successes / trials`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion<T> {
    pub successes: u64,
    pub trials: u64,
    pub p: T,
}

impl<T: Float> Proportion<T> {
    pub fn new(successes: u64, trials: u64) -> Self {
        let p = if trials == 0 { T::zero() } else { cast::<T>(successes as f64) / cast(trials as f64) };
        Self { successes, trials, p }
    }

    /// Standard deviation of the estimate if the true value were `target`.
    pub fn sigma_at(&self, target: T) -> T {
        binomial_sigma(target, self.trials)
    }

    /// `|p - target| <= z sigma(target)`.
    pub fn within(&self, target: T, z: T) -> bool {
        (self.p - target).abs() <= z * self.sigma_at(target)
    }

    /// `p <= ceiling + z sigma(ceiling)`.
    pub fn below(&self, ceiling: T, z: T) -> bool {
        self.p <= ceiling + z * self.sigma_at(ceiling)
    }

    /// `p >= floor - z sigma(floor)`.
    pub fn above(&self, floor: T, z: T) -> bool {
        self.p >= floor - z * self.sigma_at(floor)
    }

    pub fn estimate(&self) -> Estimate<T> {
        Estimate::new(self.trials, self.p, binomial_sigma(self.p, self.trials))
    }
}

pub fn binomial_sigma<T: Float>(p: T, n: u64) -> T {
    if n == 0 {
        return T::infinity();
    }
    (p * (T::one() - p) / cast(n as f64)).sqrt()
}

/// Total variation between empirical counts (index = value) and a pmf
/// evaluated on the same indices, with the pmf mass outside the observed
/// range added as a tail.
pub fn total_variation<T: Float>(counts: &[u64], pmf: impl Fn(usize) -> T) -> T {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return T::one();
    }
    let nf = cast::<T>(n as f64);
    let mut tv = T::zero();
    let mut covered = T::zero();
    for (k, &c) in counts.iter().enumerate() {
        let q = pmf(k);
        covered = covered + q;
        tv = tv + (cast::<T>(c as f64) / nf - q).abs();
    }
    tv = tv + (T::one() - covered).max(T::zero());
    tv / cast(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_matches_direct_formula() {
        let xs = [1.0f64, 2.0, 4.0, 8.0];
        let e = Estimate::from_samples(&xs);
        assert!((e.mean - 3.75).abs() < 1e-12);
        let var = xs.iter().map(|x| (x - 3.75f64).powi(2)).sum::<f64>() / 3.0;
        assert!((e.std_err - (var / 4.0).sqrt()).abs() < 1e-12);
        assert!(e.lo95 < e.mean && e.mean < e.hi95);
    }

    #[test]
    fn proportion_bands() {
        let p = Proportion::<f64>::new(5_100, 10_000);
        assert!(p.within(0.5, 3.0));
        assert!(!p.within(0.45, 3.0));
        assert!(p.below(0.5, 3.0));
        assert!(p.above(0.5, 3.0));
        let q = Proportion::<f32>::new(1, 4);
        assert_eq!(q.p, 0.25);
    }

    #[test]
    fn tv_of_exact_law_is_zero() {
        let pmf = |k: usize| {
            if k == 1 {
                0.5
            } else if k == 2 {
                0.5
            } else {
                0.0
            }
        };
        assert!(total_variation(&[0, 50, 50], pmf) < 1e-12);
        assert!((total_variation(&[0, 100], pmf) - 0.5f64).abs() < 1e-12);
    }
}
