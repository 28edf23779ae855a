//! Monte Carlo counterparts of the exact excursion facts, and backend cross-checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::path::{sample_path, DirectWalker, Path, PathKind, RespawnPolicy, Side, Stop, Trace, Walker};
use crate::error::Result;
use crate::rng::derive;

/// Block wide enough that the excursions used here never feel its ends.
const WIDE_A: i64 = 40;
const WIDE_L: i64 = 20;

fn wide_walker(seed: u64) -> Result<DirectWalker> {
    DirectWalker::new(WIDE_A, WIDE_A.pow(4), seed)
}

/// `(hits, trials)` for "the first walk from `L` reaches distance `ell`".
pub fn reach_counts(ell: i64, samples: u64, seed: u64) -> Result<(u64, u64)> {
    let mut w = wide_walker(derive(seed, ell as u64))?;
    let mut hits = 0;
    for _ in 0..samples {
        let mut tr = Trace::new(WIDE_L, WIDE_A, false);
        let stop = w.walk(WIDE_L, Some(WIDE_L), &mut tr)?;
        let reach = (WIDE_L - tr.min).max(tr.max - WIDE_L);
        if stop != Stop::Target || reach >= ell {
            hits += 1;
        }
    }
    Ok((hits, samples))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvenVisit {
    pub trials: u64,
    pub left: u64,
    /// Left excursions with an even number of visits to `L - 1`.
    pub left_even: u64,
}

pub fn even_visit_counts(samples: u64, seed: u64) -> Result<EvenVisit> {
    let mut w = wide_walker(seed)?;
    let mut out = EvenVisit { trials: samples, ..Default::default() };
    for _ in 0..samples {
        let mut tr = Trace::new(WIDE_L, WIDE_A, false);
        if w.walk(WIDE_L, Some(WIDE_L), &mut tr)? != Stop::Target {
            continue;
        }
        if tr.min < WIDE_L {
            out.left += 1;
            // visits to L-1 equal departures from it
            if tr.parity >> (WIDE_L - 1) & 1 == 0 {
                out.left_even += 1;
            }
        }
    }
    Ok(out)
}

/// Visits to `i` in each bout between `i` and `i+1` of `q`, until it hits `i-1` or `i+2`.
pub fn bouts(q: &[i64], i: i64) -> Vec<u32> {
    let mut out = Vec::new();
    let mut cur: Option<u32> = None;
    for &x in q {
        match cur {
            None if x == i => cur = Some(1),
            Some(n) if x == i => cur = Some(n + 1),
            Some(n) if x == i - 1 || x == i + 2 => {
                out.push(n);
                cur = None;
            }
            _ => {}
        }
    }
    out
}

/// Bout counts at `L + 1` over right excursions from `L` with maximum at least `L + 3`.
pub fn bounce_samples(samples: usize, seed: u64) -> Result<Vec<u32>> {
    let l = 10;
    let mut w = wide_walker(seed)?;
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        let p = sample_path(&mut w, l, RespawnPolicy::Uniform, true)?;
        if p.kind != PathKind::Excursion || p.side != Side::Right || p.range_max < l + 3 {
            continue;
        }
        let q = p.positions.as_ref().expect("recorded path");
        out.extend(bouts(q, l + 1));
    }
    out.truncate(samples);
    Ok(out)
}

/// For the two cases where a parity is fixed by the conditioning, the parity
/// predicted from the range and the parities below, paired with the actual one.
pub fn forced_parity(p: &Path, a: i64) -> Option<(u8, u8)> {
    if !matches!(p.kind, PathKind::Excursion) || p.range_min < 0 || p.range_max > a {
        return None;
    }
    let bit = |i: i64| (p.parity >> i & 1) as u8;
    let l = p.start;
    match p.side {
        Side::Left if p.range_min < l => {
            // half crossings of (x, x+1): h(min-1) = 0, parity(x) = h(x-1) + h(x)
            let mut h = 0u8;
            for x in p.range_min..l - 1 {
                h = (bit(x) + h) & 1;
            }
            Some((h ^ 1, bit(l - 1)))
        }
        Side::Right if p.range_max > l => {
            let e = p.range_max;
            let mut h = 1u8;
            for x in l + 1..e {
                h = (bit(x) + h) & 1;
            }
            Some((h, bit(e)))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParityKey {
    pub kind: PathKind,
    pub start: i64,
    pub min: i64,
    pub max: i64,
    pub site: i64,
    pub prefix: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityBin {
    pub n: u64,
    pub zeros: u64,
}

/// Frequencies of `Parity(i) = 0` binned by path kind, start, range, site and
/// 16 buckets of the parities already seen on the conditioning side.
pub fn conditional_parity_bins<W: Walker>(
    w: &mut W,
    samples: u64,
    seed: u64,
) -> Result<BTreeMap<ParityKey, ParityBin>> {
    let a = w.a();
    let mut pick = crate::rng::BitStream::new(seed, 0xB1A5);
    let mut bins = BTreeMap::new();
    for _ in 0..samples {
        let l = 1 + (pick.next_f64() * (a - 1) as f64) as i64;
        let p = sample_path(w, l, RespawnPolicy::Uniform, false)?;
        if p.kind == PathKind::FailedRearrival {
            continue;
        }
        let lo = p.range_min.max(0);
        let hi = p.range_max.min(a);
        for i in lo..=hi {
            let forced = match p.side {
                Side::Right => i == p.range_max || i <= l,
                Side::Left => i == l - 1 || i >= l,
            };
            if forced {
                continue;
            }
            let prefix_mask = match p.side {
                Side::Right => p.parity & ((1u64 << i) - 1) & !((1u64 << l) - 1),
                Side::Left => p.parity & ((1u64 << i) - 1),
            };
            let key = ParityKey {
                kind: p.kind,
                start: l,
                min: p.range_min,
                max: p.range_max,
                site: i,
                prefix: (crate::rng::mix64(prefix_mask) & 15) as u8,
            };
            let b: &mut ParityBin = bins.entry(key).or_default();
            b.n += 1;
            if p.parity >> i & 1 == 0 {
                b.zeros += 1;
            }
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub paths: u64,
    pub kinds: [u64; 4],
    pub right: u64,
    /// Emissions, and emissions followed by a failed re-arrival.
    pub emissions: u64,
    pub failed: u64,
    pub parity_ones: Vec<u64>,
}

/// Path statistics from `L` chosen by `start` for each path.
pub fn path_summary<W: Walker>(
    w: &mut W,
    paths: u64,
    policy: RespawnPolicy,
    mut start: impl FnMut(u64) -> i64,
) -> Result<PathSummary> {
    let a = w.a();
    let mut s = PathSummary { paths, parity_ones: vec![0; (a + 1) as usize], ..Default::default() };
    for t in 0..paths {
        let p = sample_path(w, start(t), policy, false)?;
        s.kinds[p.kind as usize] += 1;
        if p.side == Side::Right {
            s.right += 1;
        }
        s.emissions += p.emissions as u64;
        s.failed += p.emissions.saturating_sub(1) as u64;
        for i in 0..=a {
            s.parity_ones[i as usize] += p.parity >> i & 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bout_extraction() {
        // bouts at 2: [2,3,2,1] -> 2 visits; [2,3,4] -> 1 visit
        let q = [0, 1, 2, 3, 2, 1, 2, 3, 4, 3, 2, 1, 0];
        assert_eq!(bouts(&q, 2), vec![2, 1, 1]);
    }

    #[test]
    fn forced_parities_hold_on_sampled_paths() {
        let mut w = DirectWalker::new(12, 144, 4).unwrap();
        let mut seen = 0;
        for t in 0..20_000 {
            let l = 1 + (t % 11) as i64;
            let p = sample_path(&mut w, l, RespawnPolicy::Uniform, false).unwrap();
            if let Some((want, got)) = forced_parity(&p, 12) {
                assert_eq!(want, got, "{p:?}");
                seen += 1;
            }
        }
        assert!(seen > 10_000);
    }

    #[test]
    fn small_reach_sample() {
        let (hits, n) = reach_counts(2, 20_000, 1).unwrap();
        let p = hits as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }
}
