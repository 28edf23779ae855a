//! Paths of the hot particle in block coordinates `[0, a]`, with the
//! neighbouring blocks at `-K+a` and `K`.
//!
//! Two backends produce the same `Path` records. The direct sampler walks
//! inside the block and replaces each visit to a transit region by a single
//! out-step that escapes with probability `1/(K-a)` (gambler's ruin from one
//! step away); the literal sampler walks every site against a `StackSet`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};
use crate::layout::BlockLayout;
use crate::rng::{BitStream, Orientation, StackLayout, StackSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathKind {
    Excursion,
    LongExcursion,
    DoubleSided,
    FailedRearrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Boundary a respawned hot particle enters from after an emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RespawnPolicy {
    Uniform,
    Same,
    Opposite,
    Right,
}

impl RespawnPolicy {
    fn pick(self, emitted: Side, coin: impl FnOnce() -> bool) -> Side {
        match self {
            RespawnPolicy::Uniform => {
                if coin() {
                    Side::Right
                } else {
                    Side::Left
                }
            }
            RespawnPolicy::Same => emitted,
            RespawnPolicy::Opposite => match emitted {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            },
            RespawnPolicy::Right => Side::Right,
        }
    }
}

impl std::str::FromStr for RespawnPolicy {
    type Err = SandpileError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "same" => Ok(Self::Same),
            "opposite" => Ok(Self::Opposite),
            "right" => Ok(Self::Right),
            _ => Err(SandpileError::Config(format!("unknown respawn policy {s:?}"))),
        }
    }
}

/// One path `Q^t`. Range bounds are clipped to `-1` and `a+1` when the path
/// leaves the block; `parity` holds bit `i` for `Parity_Q(i)`, `i` in `[0, a]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub start: i64,
    pub kind: PathKind,
    pub side: Side,
    pub range_min: i64,
    pub range_max: i64,
    pub parity: u64,
    /// In-block steps plus one per transit visit.
    pub steps: u64,
    pub emissions: u32,
    pub local_time: Option<Vec<u64>>,
    /// Visited positions, transit visits recorded as `-1` or `a+1`, final position included.
    pub positions: Option<Vec<i64>>,
}

impl Path {
    pub fn parity_at(&self, i: i64) -> u8 {
        ((self.parity >> i) & 1) as u8
    }

    pub fn range_contains(&self, i: i64) -> bool {
        i >= self.range_min && i <= self.range_max
    }
}

/// Local time `#{u < length : Q(u) = i}` over `[lo, hi]` of the positions, and parities.
pub fn parity_of_path(q: &[i64]) -> Result<(i64, Vec<u64>, Vec<u8>)> {
    if q.is_empty() {
        return Err(SandpileError::Config("empty path".into()));
    }
    let lo = *q.iter().min().unwrap();
    let hi = *q.iter().max().unwrap();
    let mut local = vec![0u64; (hi - lo + 1) as usize];
    for &x in &q[..q.len() - 1] {
        local[(x - lo) as usize] += 1;
    }
    let parity = local.iter().map(|&c| (c % 2) as u8).collect();
    Ok((lo, local, parity))
}

/// `omega_tilde` after the path.
pub fn step_carpet(omega: u64, path: &Path) -> u64 {
    omega ^ path.parity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Target,
    Escape(Side),
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    pub parity: u64,
    pub min: i64,
    pub max: i64,
    pub steps: u64,
    pub local: Option<Vec<u64>>,
    pub positions: Option<Vec<i64>>,
}

impl Trace {
    pub fn new(start: i64, a: i64, record: bool) -> Self {
        Self {
            parity: 0,
            min: start,
            max: start,
            steps: 0,
            local: record.then(|| vec![0; (a + 1) as usize]),
            positions: record.then(Vec::new),
        }
    }

    #[inline]
    fn depart(&mut self, p: i64, a: i64) {
        self.steps += 1;
        if (0..=a).contains(&p) {
            self.parity ^= 1u64 << p;
            if let Some(l) = self.local.as_mut() {
                l[p as usize] += 1;
            }
        }
        if let Some(v) = self.positions.as_mut() {
            v.push(p);
        }
    }

    #[inline]
    fn visit(&mut self, p: i64) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }
}

/// Source of walk segments in block coordinates.
pub trait Walker {
    fn a(&self) -> i64;
    fn k(&self) -> i64;
    /// Walk from `start` until `target` is reached (after at least one step) or a
    /// neighbouring block is hit.
    fn walk(&mut self, start: i64, target: Option<i64>, trace: &mut Trace) -> Result<Stop>;
    fn coin(&mut self) -> bool;
}

/// Eight walk steps inside the block from a fixed start, for one byte of bits.
#[derive(Debug, Clone, Copy, Default)]
struct ByteStep {
    end: u8,
    outs: u8,
    out_left: bool,
    out_right: bool,
    parity: u64,
    /// Positions after each step.
    visited: u64,
}

fn byte_table(a: i64) -> Vec<ByteStep> {
    let mut t = Vec::with_capacity((a as usize + 1) * 256);
    for start in 0..=a {
        for byte in 0u32..256 {
            let mut e = ByteStep::default();
            let mut p = start;
            for i in 0..8 {
                e.parity ^= 1u64 << p;
                if byte >> i & 1 == 1 {
                    if p == a {
                        e.outs += 1;
                        e.out_right = true;
                    } else {
                        p += 1;
                    }
                } else if p == 0 {
                    e.outs += 1;
                    e.out_left = true;
                } else {
                    p -= 1;
                }
                e.visited |= 1u64 << p;
            }
            e.end = p as u8;
            t.push(e);
        }
    }
    t
}

/// Direct sampler driven by a `BitStream`.
#[derive(Debug, Clone)]
pub struct DirectWalker {
    a: i64,
    k: i64,
    p_escape: f64,
    countdown: u64,
    rng: BitStream,
    buf: u64,
    left: u32,
    table: std::sync::Arc<Vec<ByteStep>>,
}

impl DirectWalker {
    pub fn new(a: i64, k: i64, seed: u64) -> Result<Self> {
        if a <= 0 || a > 62 || k <= a + 1 {
            return Err(SandpileError::Config(format!(
                "direct sampler needs 0 < a <= 62 and K > a+1, got a={a}, K={k}"
            )));
        }
        let mut rng = BitStream::new(seed, 0xB10C);
        let p_escape = 1.0 / (k - a) as f64;
        let countdown = rng.geometric(p_escape);
        let table = std::sync::Arc::new(byte_table(a));
        Ok(Self { a, k, p_escape, countdown, rng, buf: 0, left: 0, table })
    }

    #[inline]
    fn out_step(&mut self) -> bool {
        self.countdown -= 1;
        if self.countdown == 0 {
            self.countdown = self.rng.geometric(self.p_escape);
            true
        } else {
            false
        }
    }

    /// Next direction bit of the walk.
    #[inline]
    fn bit(&mut self) -> bool {
        if self.left == 0 {
            self.buf = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.buf & 1 == 1;
        self.buf >>= 1;
        self.left -= 1;
        b
    }

    pub fn rng(&mut self) -> &mut BitStream {
        &mut self.rng
    }

    fn walk_fast(
        &mut self,
        start: i64,
        target: i64,
        parity: &mut u64,
        steps: &mut u64,
        min: &mut i64,
        max: &mut i64,
    ) -> Stop {
        let a = self.a;
        let table = std::sync::Arc::clone(&self.table);
        let target_bit = if (0..=a).contains(&target) { 1u64 << target } else { 0 };
        let mut p = start;
        let mut par = *parity;
        let mut n = 0u64;
        let (mut lo, mut hi) = (*min, *max);
        let stop = loop {
            // whole bytes while no stop can occur inside them
            while self.left >= 8 {
                let e = &table[(p as usize) << 8 | (self.buf & 0xFF) as usize];
                if e.visited & target_bit != 0 || e.outs as u64 >= self.countdown {
                    break;
                }
                self.buf >>= 8;
                self.left -= 8;
                self.countdown -= e.outs as u64;
                par ^= e.parity;
                n += 8;
                if e.out_left {
                    lo = -1;
                } else {
                    lo = lo.min(e.visited.trailing_zeros() as i64);
                }
                if e.out_right {
                    hi = a + 1;
                } else {
                    hi = hi.max(63 - e.visited.leading_zeros() as i64);
                }
                p = e.end as i64;
            }
            par ^= 1u64 << p;
            n += 1;
            if self.bit() {
                if p == a {
                    hi = a + 1;
                    if self.out_step() {
                        break Stop::Escape(Side::Right);
                    }
                } else {
                    p += 1;
                    if p > hi {
                        hi = p;
                    }
                }
            } else if p == 0 {
                lo = -1;
                if self.out_step() {
                    break Stop::Escape(Side::Left);
                }
            } else {
                p -= 1;
                if p < lo {
                    lo = p;
                }
            }
            if p == target {
                break Stop::Target;
            }
        };
        *parity = par;
        *steps += n;
        *min = lo;
        *max = hi;
        stop
    }
}

impl Walker for DirectWalker {
    fn a(&self) -> i64 {
        self.a
    }

    fn k(&self) -> i64 {
        self.k
    }

    fn coin(&mut self) -> bool {
        self.rng.next_bit()
    }

    fn walk(&mut self, start: i64, target: Option<i64>, tr: &mut Trace) -> Result<Stop> {
        let a = self.a;
        if !(0..=a).contains(&start) {
            return Err(SandpileError::OutOfRange(start));
        }
        if tr.positions.is_none() {
            let t = target.unwrap_or(-2);
            return Ok(self.walk_fast(start, t, &mut tr.parity, &mut tr.steps, &mut tr.min, &mut tr.max));
        }
        let mut p = start;
        loop {
            tr.depart(p, a);
            let up = self.bit();
            if up && p == a {
                tr.visit(a + 1);
                if self.out_step() {
                    tr.positions.as_mut().unwrap().push(a + 1);
                    return Ok(Stop::Escape(Side::Right));
                }
                tr.positions.as_mut().unwrap().push(a + 1);
                // the transit visit is a departure outside the block
                tr.steps += 1;
            } else if !up && p == 0 {
                tr.visit(-1);
                if self.out_step() {
                    tr.positions.as_mut().unwrap().push(-1);
                    return Ok(Stop::Escape(Side::Left));
                }
                tr.positions.as_mut().unwrap().push(-1);
                tr.steps += 1;
            } else {
                p += if up { 1 } else { -1 };
                tr.visit(p);
            }
            if Some(p) == target {
                tr.positions.as_mut().unwrap().push(p);
                return Ok(Stop::Target);
            }
        }
    }
}

/// Stack-driven walker on a one-block layout: block sites use `Single`,
/// the left transit `R`, the right transit `L`.
#[derive(Debug, Clone)]
pub struct LiteralWalker {
    layout: BlockLayout,
    pub stacks: StackSet,
    coin: BitStream,
}

impl LiteralWalker {
    pub fn new(a: i64, k: i64, seed: u64) -> Result<Self> {
        let layout = BlockLayout::with_period(a, k, 1)?;
        let stacks = StackSet::new(layout.left_end() + 1, layout.right_end(), StackLayout::Blocks(layout), seed)?;
        Ok(Self { layout, stacks, coin: BitStream::new(seed, 0xC011) })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }
}

impl Walker for LiteralWalker {
    fn a(&self) -> i64 {
        self.layout.a
    }

    fn k(&self) -> i64 {
        self.layout.k
    }

    fn coin(&mut self) -> bool {
        self.coin.next_bit()
    }

    fn walk(&mut self, start: i64, target: Option<i64>, tr: &mut Trace) -> Result<Stop> {
        let (a, k) = (self.layout.a, self.layout.k);
        let (left_wall, right_wall) = (a - k, k);
        let mut p = start;
        loop {
            let orient = if p < 0 {
                Orientation::Right
            } else if p > a {
                Orientation::Left
            } else {
                Orientation::Single
            };
            if (0..=a).contains(&p) {
                tr.depart(p, a);
            } else if let Some(v) = tr.positions.as_mut() {
                let clipped = if p < 0 { -1 } else { a + 1 };
                if v.last() != Some(&clipped) {
                    v.push(clipped);
                    tr.steps += 1;
                }
            }
            let d = self.stacks.draw(p, orient)?;
            p += d as i64;
            tr.visit(p.clamp(-1, a + 1));
            if p == left_wall {
                if let Some(v) = tr.positions.as_mut() {
                    if v.last() != Some(&-1) {
                        v.push(-1);
                    }
                }
                return Ok(Stop::Escape(Side::Left));
            }
            if p == right_wall {
                if let Some(v) = tr.positions.as_mut() {
                    if v.last() != Some(&(a + 1)) {
                        v.push(a + 1);
                    }
                }
                return Ok(Stop::Escape(Side::Right));
            }
            if Some(p) == target {
                if let Some(v) = tr.positions.as_mut() {
                    v.push(p);
                }
                return Ok(Stop::Target);
            }
        }
    }
}

/// Sample `Q^t` from the hole at `l`: an excursion, or an emission followed
/// by respawns from the block boundary until one arrives at `l`.
pub fn sample_path<W: Walker>(w: &mut W, l: i64, policy: RespawnPolicy, record: bool) -> Result<Path> {
    let a = w.a();
    if !(0..=a).contains(&l) {
        return Err(SandpileError::OutOfRange(l));
    }
    let mut tr = Trace::new(l, a, record);
    let first = w.walk(l, Some(l), &mut tr)?;
    let (kind, side, emissions) = match first {
        Stop::Target => {
            let side = if tr.max > l { Side::Right } else { Side::Left };
            (PathKind::Excursion, side, 0)
        }
        Stop::Escape(side) => {
            let mut emitted = side;
            let mut failed = false;
            let mut emissions = 1;
            let entry = loop {
                let entry = policy.pick(emitted, || w.coin());
                let b = match entry {
                    Side::Left => 0,
                    Side::Right => a,
                };
                tr.visit(b);
                if b == l {
                    if let Some(v) = tr.positions.as_mut() {
                        v.push(b);
                    }
                    break entry;
                }
                match w.walk(b, Some(l), &mut tr)? {
                    Stop::Target => break entry,
                    Stop::Escape(s) => {
                        failed = true;
                        emissions += 1;
                        emitted = s;
                    }
                }
            };
            let kind = if failed {
                PathKind::FailedRearrival
            } else if entry == side {
                PathKind::LongExcursion
            } else {
                PathKind::DoubleSided
            };
            (kind, side, emissions)
        }
    };
    Ok(Path {
        start: l,
        kind,
        side,
        range_min: tr.min.max(-1),
        range_max: tr.max.min(a + 1),
        parity: tr.parity,
        steps: tr.steps,
        emissions,
        local_time: tr.local,
        positions: tr.positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_time_examples() {
        let (lo, local, par) = parity_of_path(&[1, 2, 1]).unwrap();
        assert_eq!(lo, 1);
        assert_eq!(local, vec![1, 1]);
        assert_eq!(par, vec![1, 1]);
        let (_, _, par) = parity_of_path(&[1, 2, 3, 2, 1]).unwrap();
        assert_eq!(par, vec![1, 0, 1]);
    }

    #[test]
    fn zero_parity_path_keeps_carpet() {
        let p = Path {
            start: 0,
            kind: PathKind::Excursion,
            side: Side::Right,
            range_min: 0,
            range_max: 0,
            parity: 0,
            steps: 0,
            emissions: 0,
            local_time: None,
            positions: None,
        };
        assert_eq!(step_carpet(0b1011, &p), 0b1011);
        let q = Path { parity: 0b110, ..p };
        assert_eq!(step_carpet(0b010, &q), 0b100);
    }

    #[test]
    fn excursions_start_and_end_at_l() {
        let mut w = DirectWalker::new(8, 64, 3).unwrap();
        for _ in 0..2000 {
            let p = sample_path(&mut w, 4, RespawnPolicy::Uniform, true).unwrap();
            let q = p.positions.as_ref().unwrap();
            assert_eq!(q[0], 4);
            assert_eq!(*q.last().unwrap(), 4);
            let lt = p.local_time.as_ref().unwrap();
            for i in 0..=8 {
                assert_eq!(lt[i] % 2, ((p.parity >> i) & 1));
            }
            if p.kind == PathKind::Excursion {
                assert!(!q[1..q.len() - 1].contains(&4));
                let (lo, local, _) = parity_of_path(q).unwrap();
                assert_eq!(local.iter().sum::<u64>(), q.len() as u64 - 1);
                for i in 0..=8i64 {
                    let c = if i >= lo && ((i - lo) as usize) < local.len() { local[(i - lo) as usize] } else { 0 };
                    assert_eq!(c, lt[i as usize]);
                }
            }
        }
    }

    #[test]
    fn fast_and_traced_walks_agree() {
        for seed in 0..20 {
            let mut w1 = DirectWalker::new(6, 20, seed).unwrap();
            let mut w2 = DirectWalker::new(6, 20, seed).unwrap();
            for _ in 0..200 {
                let p1 = sample_path(&mut w1, 2, RespawnPolicy::Uniform, false).unwrap();
                let p2 = sample_path(&mut w2, 2, RespawnPolicy::Uniform, true).unwrap();
                assert_eq!(
                    (p1.kind, p1.side, p1.parity, p1.range_min, p1.range_max),
                    (p2.kind, p2.side, p2.parity, p2.range_min, p2.range_max)
                );
            }
        }
    }

    #[test]
    fn literal_paths_are_consistent() {
        let mut w = LiteralWalker::new(4, 16, 8).unwrap();
        for _ in 0..500 {
            let p = sample_path(&mut w, 2, RespawnPolicy::Same, true).unwrap();
            let q = p.positions.as_ref().unwrap();
            assert_eq!(q[0], 2);
            assert_eq!(*q.last().unwrap(), 2);
            let lt = p.local_time.as_ref().unwrap();
            for i in 0..=4 {
                assert_eq!(lt[i] % 2, (p.parity >> i) & 1);
            }
        }
    }

    #[test]
    fn respawn_from_boundary_type_two_endpoints() {
        let mut w = DirectWalker::new(8, 12, 1).unwrap();
        let mut seen = 0;
        for _ in 0..20_000 {
            let p = sample_path(&mut w, 3, RespawnPolicy::Right, true).unwrap();
            if p.kind != PathKind::Excursion {
                seen += 1;
                assert_eq!(*p.positions.as_ref().unwrap().last().unwrap(), 3);
                assert!(p.positions.as_ref().unwrap().contains(&8));
            }
        }
        assert!(seen > 0);
    }
}
