//! Exact escape law of a frozen block: exit side and parity of the in-block walk.
//!
//! For each character `chi` of the parity group the walk is weighted by
//! `(-1)^{chi(x)}` per departure from `x`; a tridiagonal solve gives the
//! transform between consecutive out-steps, and a geometric sum over
//! out-steps gives the transform at escape. An inverse Walsh-Hadamard
//! transform recovers the law.

use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use super::path::Side;
use crate::error::{Result, SandpileError};
use crate::rng::BitStream;

pub const MAX_A: i64 = 20;

#[derive(Debug, Clone)]
pub struct FrozenEscape {
    a: i64,
    /// `probs[e << (a+1) | mask]`, `e = 0` left, `1` right.
    probs: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

/// Column `col` of `(I - T)^{-1}`, `T(x, x±1) = sign(x)/2` inside `[0, a]`.
fn green_column(signs: &[f64], col: usize, out: &mut [f64]) {
    let n = signs.len();
    // row x: -s_x/2 g[x-1] + g[x] - s_x/2 g[x+1] = [x == col]
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for x in 0..n {
        let lower = if x > 0 { -signs[x] / 2.0 } else { 0.0 };
        let upper = if x + 1 < n { -signs[x] / 2.0 } else { 0.0 };
        let rhs = if x == col { 1.0 } else { 0.0 };
        let (cp, dp) = if x > 0 { (c[x - 1], d[x - 1]) } else { (0.0, 0.0) };
        let m = 1.0 - lower * cp;
        c[x] = upper / m;
        d[x] = (rhs - lower * dp) / m;
    }
    out[n - 1] = d[n - 1];
    for x in (0..n - 1).rev() {
        out[x] = d[x] - c[x] * out[x + 1];
    }
}

fn walsh_hadamard(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

impl FrozenEscape {
    /// Law for a walk started at `a`, escaping at each out-step with probability `1/(K-a)`.
    pub fn new(a: i64, k: i64) -> Result<Self> {
        if !(1..=MAX_A).contains(&a) || k <= a + 1 {
            return Err(SandpileError::Config(format!("frozen escape tables need 1 <= a <= {MAX_A} and K > a+1")));
        }
        let n = (a + 1) as usize;
        let size = 1usize << n;
        let p = 1.0 / (k - a) as f64;
        let mut left = vec![0.0; size];
        let mut right = vec![0.0; size];
        let mut signs = vec![1.0; n];
        let (mut g0, mut ga) = (vec![0.0; n], vec![0.0; n]);
        for chi in 0..size {
            for (x, s) in signs.iter_mut().enumerate() {
                *s = if chi >> x & 1 == 1 { -1.0 } else { 1.0 };
            }
            green_column(&signs, 0, &mut g0);
            green_column(&signs, n - 1, &mut ga);
            // one segment: start side -> side of the next out-step
            let (s0, sa) = (signs[0] / 2.0, signs[n - 1] / 2.0);
            let seg = [[g0[0] * s0, ga[0] * sa], [g0[n - 1] * s0, ga[n - 1] * sa]];
            // p * seg * (I - (1-p) seg)^{-1}, row of start side a
            let q = 1.0 - p;
            let m = [[1.0 - q * seg[0][0], -q * seg[0][1]], [-q * seg[1][0], 1.0 - q * seg[1][1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
            left[chi] = p * (seg[1][0] * inv[0][0] + seg[1][1] * inv[1][0]);
            right[chi] = p * (seg[1][0] * inv[0][1] + seg[1][1] * inv[1][1]);
        }
        walsh_hadamard(&mut left);
        walsh_hadamard(&mut right);
        let scale = 1.0 / size as f64;
        let mut probs: Vec<f64> = left.into_iter().chain(right).map(|v| (v * scale).max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        if !(total - 1.0).abs().lt(&1e-9) {
            return Err(SandpileError::Invariant(format!("escape law sums to {total}")));
        }
        probs.iter_mut().for_each(|v| *v /= total);
        let alias =
            WeightedAliasIndex::new(probs.clone()).map_err(|e| SandpileError::Invariant(format!("escape law: {e}")))?;
        Ok(Self { a, probs, alias })
    }

    pub fn prob(&self, side: Side, mask: u64) -> f64 {
        let e = (side == Side::Right) as usize;
        self.probs[e << (self.a + 1) | mask as usize]
    }

    pub fn right_probability(&self) -> f64 {
        self.probs[1 << (self.a + 1)..].iter().sum()
    }

    pub fn sample(&self, rng: &mut BitStream) -> (Side, u64) {
        let i = self.alias.sample(rng);
        let bits = (self.a + 1) as u32;
        let side = if i >> bits == 1 { Side::Right } else { Side::Left };
        (side, (i & ((1 << bits) - 1)) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::super::path::{DirectWalker, Stop, Trace, Walker};
    use super::*;
    use crate::exact;

    #[test]
    fn exit_side_matches_gamblers_ruin() {
        for (a, k) in [(2, 5), (4, 16), (8, 4096)] {
            let fe = FrozenEscape::new(a, k).unwrap();
            let want = exact::to_f64(exact::right_emission_ceiling(a, k));
            assert!((fe.right_probability() - want).abs() < 1e-10, "{a} {k}");
        }
    }

    #[test]
    fn agrees_with_stepping() {
        let (a, k) = (3, 9);
        let fe = FrozenEscape::new(a, k).unwrap();
        let mut w = DirectWalker::new(a, k, 11).unwrap();
        let n = 200_000;
        let mut counts = vec![0u64; 2 << (a + 1)];
        for _ in 0..n {
            let mut tr = Trace::new(a, a, false);
            let Stop::Escape(side) = w.walk(a, None, &mut tr).unwrap() else { panic!() };
            counts[((side == Side::Right) as usize) << (a + 1) | tr.parity as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let side = if i >> (a + 1) == 1 { Side::Right } else { Side::Left };
                (c as f64 / n as f64 - fe.prob(side, (i & 15) as u64)).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv = {tv}");
    }
}
