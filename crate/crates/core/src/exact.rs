//! Exact reference probabilities.

use num_rational::Rational64;
use num_traits::{One, Zero};

pub type Q = Rational64;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

/// Simple walk from `x` in `[0, n]`: probability of hitting `n` before `0`.
pub fn gamblers_ruin(x: i64, n: i64) -> Q {
    q(x, n)
}

/// Probability that a simple excursion reaches distance `l >= 1`.
pub fn excursion_reach(l: i64) -> Q {
    gamblers_ruin(1, l)
}

/// `P(N odd)` for `N` Geometric(`p`) on `{1, 2, ...}`.
pub fn geometric_odd(p: Q) -> Q {
    let r = Q::one() - p;
    p / (Q::one() - r * r)
}

pub fn geometric_pmf(p: Q, k: u32) -> Q {
    if k == 0 {
        return Q::zero();
    }
    p * (Q::one() - p).pow(k as i32 - 1)
}

/// Simple excursion from an interior site: probability of stepping left first
/// and leaving the left neighbour an even number of times. The number of
/// departures from the neighbour is Geometric(1/2).
pub fn even_visit_joint() -> Q {
    q(1, 2) * (Q::one() - geometric_odd(q(1, 2)))
}

/// Bounces between `i` and `i+1` within an excursion that goes past `i+1`:
/// Geometric(3/4).
pub fn bounce_success() -> Q {
    q(3, 4)
}

/// Ceiling on the per-emission probability of leaving a block to the right.
pub fn right_emission_ceiling(a: i64, k: i64) -> Q {
    q(k, 2 * k - a)
}

/// Ceiling on the failed re-arrival rate per attempted emission.
pub fn failed_rearrival_ceiling(a: i64, k: i64) -> Q {
    q(a, k)
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gambler's ruin by iterating the harmonic equations to convergence.
    fn ruin_by_relaxation(x: usize, n: usize) -> f64 {
        let mut h = vec![0.0f64; n + 1];
        h[n] = 1.0;
        for _ in 0..200_000 {
            for y in 1..n {
                h[y] = 0.5 * (h[y - 1] + h[y + 1]);
            }
        }
        h[x]
    }

    #[test]
    fn reach_matches_relaxation() {
        for l in [2usize, 4, 8, 16] {
            assert!((ruin_by_relaxation(1, l) - to_f64(excursion_reach(l as i64))).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_odd_matches_partial_sums() {
        let p = q(3, 4);
        let mut s = 0.0;
        for k in (1..30).step_by(2) {
            s += to_f64(geometric_pmf(p, k));
        }
        assert!((s - to_f64(geometric_odd(p))).abs() < 1e-15);
        assert_eq!(geometric_odd(p), q(4, 5));
    }

    #[test]
    fn even_visit_value() {
        let mut s = 0.0;
        for k in (2..120).step_by(2) {
            s += 0.5f64.powi(k);
        }
        assert!((0.5 * s - to_f64(even_visit_joint())).abs() < 1e-12);
        assert_eq!(even_visit_joint(), q(1, 6));
    }

    #[test]
    fn ceilings() {
        assert_eq!(right_emission_ceiling(16, 65536), q(65536, 131056));
        assert!(to_f64(right_emission_ceiling(16, 256)) <= 2.0 / 3.0);
        assert_eq!(failed_rearrival_ceiling(4, 256), q(1, 64));
    }
}
