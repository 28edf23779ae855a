//! Counter-based instruction streams.
//!
//! Instruction `j` of the stream keyed by `(seed, site, orientation)` is bit
//! `j % 64` of `mix64(key + (j / 64 + 1) * GOLDEN)`, so any entry can be
//! replayed without stored tapes.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};
use crate::layout::{BlockLayout, SiteKind};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent 64-bit key from a parent key and a salt.
#[inline]
pub fn derive(parent: u64, salt: u64) -> u64 {
    mix64(mix64(parent ^ 0xA076_1D64_78BD_642F).wrapping_add(salt.wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Single,
    Left,
    Right,
}

impl Orientation {
    fn tag(self) -> u64 {
        match self {
            Orientation::Single => 1,
            Orientation::Left => 2,
            Orientation::Right => 3,
        }
    }
}

#[inline]
pub fn stream_key(seed: u64, site: i64, orientation: Orientation) -> u64 {
    derive(derive(seed, site as u64), orientation.tag())
}

#[inline]
fn stream_word(key: u64, word: u64) -> u64 {
    mix64(key.wrapping_add((word + 1).wrapping_mul(GOLDEN)))
}

/// Pure lookup of instruction `index` (0-based) of a stream.
#[inline]
pub fn instruction(seed: u64, site: i64, orientation: Orientation, index: u64) -> i8 {
    let w = stream_word(stream_key(seed, site, orientation), index / 64);
    if (w >> (index % 64)) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Which orientations a site carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StackLayout {
    /// Every site has a single stream.
    Uniform,
    /// Block sites carry `Single`, transit sites carry `Left` and `Right`.
    Blocks(BlockLayout),
}

impl StackLayout {
    #[inline]
    pub fn has_stream(&self, site: i64, orientation: Orientation) -> bool {
        match (self, orientation) {
            (StackLayout::Uniform, Orientation::Single) => true,
            (StackLayout::Uniform, _) => false,
            (StackLayout::Blocks(l), o) => {
                let block = matches!(l.site_kind(site), SiteKind::Block(_));
                block == (o == Orientation::Single)
            }
        }
    }

    #[inline]
    fn slot(orientation: Orientation) -> usize {
        match orientation {
            Orientation::Single | Orientation::Left => 0,
            Orientation::Right => 1,
        }
    }
}

/// Per-site instruction streams on `[lo, hi)`, with consumption counters.
#[derive(Debug, Clone)]
pub struct StackSet {
    lo: i64,
    hi: i64,
    layout: StackLayout,
    seed: u64,
    counts: Vec<u64>,
    words: Vec<u64>,
}

pub fn create_stacks(lo: i64, hi: i64, layout: StackLayout, seed: u64) -> Result<StackSet> {
    StackSet::new(lo, hi, layout, seed)
}

impl StackSet {
    pub fn new(lo: i64, hi: i64, layout: StackLayout, seed: u64) -> Result<Self> {
        if hi <= lo {
            return Err(SandpileError::Config(format!("empty stack interval [{lo}, {hi})")));
        }
        if let StackLayout::Blocks(l) = layout {
            if l.a + 1 >= l.k || l.a <= 0 {
                return Err(SandpileError::Config(format!(
                    "invalid block layout: width {} vs period {}",
                    l.a + 1,
                    l.k
                )));
            }
        }
        let len = (hi - lo) as usize;
        Ok(Self { lo, hi, layout, seed, counts: vec![0; 2 * len], words: vec![0; 2 * len] })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interval(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn layout(&self) -> StackLayout {
        self.layout
    }

    pub fn has_stream(&self, site: i64, orientation: Orientation) -> bool {
        site >= self.lo && site < self.hi && self.layout.has_stream(site, orientation)
    }

    #[inline]
    fn index(&self, site: i64, orientation: Orientation) -> Result<usize> {
        if site < self.lo || site >= self.hi {
            return Err(SandpileError::OutOfRange(site));
        }
        if !self.layout.has_stream(site, orientation) {
            return Err(SandpileError::Layout { site, orientation });
        }
        Ok(2 * (site - self.lo) as usize + StackLayout::slot(orientation))
    }

    /// Next unused instruction of the stream; advances its counter by one.
    #[inline]
    pub fn draw(&mut self, site: i64, orientation: Orientation) -> Result<i8> {
        let idx = self.index(site, orientation)?;
        let c = self.counts[idx];
        if c % 64 == 0 {
            self.words[idx] = stream_word(stream_key(self.seed, site, orientation), c / 64);
        }
        self.counts[idx] = c + 1;
        Ok(if (self.words[idx] >> (c % 64)) & 1 == 1 { 1 } else { -1 })
    }

    /// `draw` without the layout lookup; the caller vouches for the stream.
    #[inline]
    pub(crate) fn draw_known(&mut self, site: i64, orientation: Orientation) -> Result<i8> {
        debug_assert!(self.layout.has_stream(site, orientation));
        if site < self.lo || site >= self.hi {
            return Err(SandpileError::OutOfRange(site));
        }
        let idx = 2 * (site - self.lo) as usize + StackLayout::slot(orientation);
        let c = self.counts[idx];
        if c % 64 == 0 {
            self.words[idx] = stream_word(stream_key(self.seed, site, orientation), c / 64);
        }
        self.counts[idx] = c + 1;
        Ok(if (self.words[idx] >> (c % 64)) & 1 == 1 { 1 } else { -1 })
    }

    pub fn consumed(&self, site: i64, orientation: Orientation) -> Result<u64> {
        Ok(self.counts[self.index(site, orientation)?])
    }

    /// Total consumption at a site over all its streams.
    pub fn consumed_at(&self, site: i64) -> u64 {
        if site < self.lo || site >= self.hi {
            return 0;
        }
        let i = 2 * (site - self.lo) as usize;
        self.counts[i] + self.counts[i + 1]
    }

    /// Instruction `index` of a stream, without consuming it.
    pub fn peek(&self, site: i64, orientation: Orientation, index: u64) -> Result<i8> {
        self.index(site, orientation)?;
        Ok(instruction(self.seed, site, orientation, index))
    }

    /// Same streams on a new interval, keeping the counters of shared sites.
    pub fn rebased(&self, lo: i64, hi: i64) -> Result<StackSet> {
        let mut out = StackSet::new(lo, hi, self.layout, self.seed)?;
        for site in lo.max(self.lo)..hi.min(self.hi) {
            let src = 2 * (site - self.lo) as usize;
            let dst = 2 * (site - lo) as usize;
            out.counts[dst..dst + 2].copy_from_slice(&self.counts[src..src + 2]);
            out.words[dst..dst + 2].copy_from_slice(&self.words[src..src + 2]);
        }
        Ok(out)
    }
}

/// Sequential counter-based generator for samplers that do not need
/// site-addressed streams.
#[derive(Debug, Clone)]
pub struct BitStream {
    key: u64,
    counter: u64,
    buf: u64,
    left: u32,
}

impl BitStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { key: derive(seed, stream), counter: 0, buf: 0, left: 0 }
    }

    #[inline]
    fn word(&mut self) -> u64 {
        let w = stream_word(self.key, self.counter);
        self.counter += 1;
        w
    }

    #[inline]
    pub fn next_bit(&mut self) -> bool {
        if self.left == 0 {
            self.buf = self.word();
            self.left = 64;
        }
        let b = self.buf & 1 == 1;
        self.buf >>= 1;
        self.left -= 1;
        b
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Number of Bernoulli(`p`) trials up to and including the first success.
    pub fn geometric(&mut self, p: f64) -> u64 {
        if p >= 1.0 {
            return 1;
        }
        let u = 1.0 - self.next_f64();
        let g = (u.ln() / (1.0 - p).ln()).ceil();
        if g < 1.0 {
            1
        } else if g > 1e18 {
            u64::MAX / 2
        } else {
            g as u64
        }
    }
}

impl RngCore for BitStream {
    fn next_u32(&mut self) -> u32 {
        (self.word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forced_layout() -> StackLayout {
        StackLayout::Blocks(BlockLayout::with_period(4, 16, 2).unwrap())
    }

    #[test]
    fn block_and_transit_streams() {
        let s = create_stacks(0, 20, forced_layout(), 7).unwrap();
        assert!(s.has_stream(2, Orientation::Single));
        assert!(!s.has_stream(2, Orientation::Left));
        assert!(s.has_stream(10, Orientation::Left));
        assert!(s.has_stream(10, Orientation::Right));
        assert!(!s.has_stream(10, Orientation::Single));
    }

    #[test]
    fn wrong_orientation_is_layout_error() {
        let mut s = create_stacks(0, 20, forced_layout(), 7).unwrap();
        assert!(matches!(s.draw(2, Orientation::Left), Err(SandpileError::Layout { .. })));
        assert!(matches!(s.draw(10, Orientation::Single), Err(SandpileError::Layout { .. })));
        assert!(matches!(s.draw(25, Orientation::Single), Err(SandpileError::OutOfRange(25))));
    }

    #[test]
    fn invalid_layout_rejected() {
        let bad = StackLayout::Blocks(BlockLayout { a: 4, k: 5, n: 1, origin: 0, k_overridden: true });
        assert!(create_stacks(0, 20, bad, 1).is_err());
        assert!(create_stacks(3, 3, StackLayout::Uniform, 1).is_err());
    }

    #[test]
    fn draws_follow_the_stream_and_count() {
        let mut s = create_stacks(0, 20, forced_layout(), 99).unwrap();
        for j in 0..200u64 {
            let expect = s.peek(10, Orientation::Right, j).unwrap();
            assert_eq!(s.draw(10, Orientation::Right).unwrap(), expect);
            assert_eq!(s.consumed(10, Orientation::Right).unwrap(), j + 1);
        }
        assert_eq!(s.consumed(10, Orientation::Left).unwrap(), 0);
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = create_stacks(-5, 5, StackLayout::Uniform, 3).unwrap();
        let mut b = create_stacks(-5, 5, StackLayout::Uniform, 3).unwrap();
        for x in -5..5 {
            for _ in 0..130 {
                assert_eq!(a.draw(x, Orientation::Single), b.draw(x, Orientation::Single));
            }
        }
    }

    #[test]
    fn rebased_keeps_counters() {
        let mut s = create_stacks(0, 10, StackLayout::Uniform, 5).unwrap();
        for _ in 0..70 {
            s.draw(4, Orientation::Single).unwrap();
        }
        let mut t = s.rebased(-10, 20).unwrap();
        assert_eq!(t.consumed(4, Orientation::Single).unwrap(), 70);
        assert_eq!(t.draw(4, Orientation::Single).unwrap(), instruction(5, 4, Orientation::Single, 70));
    }

    #[test]
    fn geometric_mean_is_plausible() {
        let mut r = BitStream::new(1, 2);
        let n = 20000;
        let total: u64 = (0..n).map(|_| r.geometric(0.25)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.15, "{mean}");
    }
}
