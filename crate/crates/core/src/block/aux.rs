//! Auxiliary `{0,1,?}` process driven alongside the true parity carpet.

use serde::{Deserialize, Serialize};

use super::path::{Path, PathKind, Side};
use crate::error::{Result, SandpileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sym {
    Zero,
    One,
    Unknown,
}

impl Sym {
    pub fn from_bit(b: u64) -> Self {
        if b & 1 == 1 {
            Sym::One
        } else {
            Sym::Zero
        }
    }

    fn flipped(self) -> Self {
        match self {
            Sym::Zero => Sym::One,
            Sym::One => Sym::Zero,
            Sym::Unknown => Sym::Unknown,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Sym::Zero => '0',
            Sym::One => '1',
            Sym::Unknown => '?',
        }
    }
}

/// Which parities of a retained path are still hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntrySource {
    Path {
        kind: PathKind,
        side: Side,
        start: i64,
        max: i64,
    },
    /// Unknown sites of a synthetic initial state; resolved only at `a`.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub s: u64,
    pub source: EntrySource,
    pub hidden: u64,
}

impl LedgerEntry {
    /// Whether the parity of this path at `j` is fixed by what has been
    /// revealed once every site left of `j` is known.
    fn determined_at(&self, j: i64, a: i64) -> bool {
        match self.source {
            EntrySource::Path { kind, side, start, max } => {
                let excursion = matches!(kind, PathKind::Excursion | PathKind::LongExcursion);
                let two = kind == PathKind::DoubleSided;
                ((excursion && side == Side::Left) || two) && j == start - 1
                    || ((excursion && side == Side::Right) || two) && j == max
            }
            EntrySource::Prior => j == a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxState {
    pub a: i64,
    pub syms: Vec<Sym>,
    pub ledger: Vec<LedgerEntry>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxStep {
    pub n_before: u32,
    pub n_star: u32,
    pub n_after: u32,
}

impl AuxStep {
    /// `N(omega_*) - N(omega)`.
    pub fn loss(&self) -> i64 {
        self.n_star as i64 - self.n_after as i64
    }
}

pub fn leftmost_one(mask: u64, a: i64) -> i64 {
    if mask == 0 {
        a + 1
    } else {
        (mask.trailing_zeros() as i64).min(a + 1)
    }
}

impl AuxState {
    /// Fully revealed state equal to `truth`.
    pub fn explicit(a: i64, truth: u64) -> Self {
        let syms = (0..=a).map(|i| Sym::from_bit(truth >> i)).collect();
        Self { a, syms, ledger: Vec::new(), t: 0 }
    }

    /// `0^z 1 ? ... ?`; `z = 1` is the Base state.
    pub fn base_like(a: i64, zeros: i64) -> Self {
        let mut syms = vec![Sym::Unknown; (a + 1) as usize];
        for s in syms.iter_mut().take(zeros as usize) {
            *s = Sym::Zero;
        }
        syms[zeros as usize] = Sym::One;
        let hidden = if zeros < a { mask_range(zeros + 1, a) } else { 0 };
        let ledger = if hidden != 0 {
            vec![LedgerEntry { s: u64::MAX, source: EntrySource::Prior, hidden }]
        } else {
            Vec::new()
        };
        Self { a, syms, ledger, t: 0 }
    }

    pub fn is_base(&self) -> bool {
        self.syms.len() >= 2
            && self.syms[0] == Sym::Zero
            && self.syms[1] == Sym::One
            && self.syms[2..].iter().all(|&s| s == Sym::Unknown)
    }

    pub fn is_exit(&self) -> bool {
        self.syms.iter().all(|&s| s == Sym::Zero)
    }

    pub fn leftmost(&self) -> i64 {
        self.syms.iter().position(|&s| s == Sym::One).map_or(self.a + 1, |p| p as i64)
    }

    pub fn n(&self) -> u32 {
        count_nonzero(&self.syms)
    }

    pub fn render(&self) -> String {
        self.syms.iter().map(|s| s.as_char()).collect()
    }

    /// Advance by one path. `truth_after` is the true carpet after the path.
    pub fn step(&mut self, path: &Path, truth_after: u64) -> Result<AuxStep> {
        let a = self.a;
        let l = path.start;
        if l != self.leftmost() {
            return Err(SandpileError::Invariant(format!(
                "path starts at {l} but the auxiliary leftmost one is at {}",
                self.leftmost()
            )));
        }
        if path.kind == PathKind::FailedRearrival {
            return Err(SandpileError::Invariant("failed re-arrival has no auxiliary step".into()));
        }
        let n_before = self.n();
        let s = self.t;
        self.t += 1;

        // refresh
        let lo = path.range_min.max(0);
        let hi = path.range_max.min(a);
        let mut hidden = mask_range(lo, hi) & !(1u64 << l);
        for corner in [l + 1, l - 1] {
            let hit = if corner == l + 1 { path.range_max == corner } else { path.range_min == corner };
            if hit && (0..=a).contains(&corner) {
                hidden &= !(1u64 << corner);
                let c = corner as usize;
                self.syms[c] = self.syms[c].flipped();
            }
        }
        for i in 0..=a {
            if hidden >> i & 1 == 1 {
                self.syms[i as usize] = Sym::Unknown;
            }
        }
        self.syms[l as usize] = Sym::Zero;
        if hidden != 0 {
            self.ledger.push(LedgerEntry {
                s,
                source: EntrySource::Path { kind: path.kind, side: path.side, start: l, max: path.range_max },
                hidden,
            });
        }
        let n_star = self.n();

        // leftmost one
        let l_new = leftmost_one(truth_after, a);
        let upto = if l_new > a { u64::MAX } else { mask_range(0, l_new) };
        for i in 0..l_new.min(a + 1) {
            self.syms[i as usize] = Sym::Zero;
        }
        if l_new <= a {
            self.syms[l_new as usize] = Sym::One;
        }
        for e in self.ledger.iter_mut() {
            e.hidden &= !upto;
        }

        // inspect
        let j = l_new + 1;
        if j <= a {
            let bit = 1u64 << j;
            for e in self.ledger.iter_mut() {
                if e.hidden & bit != 0 && e.determined_at(j, a) {
                    e.hidden &= !bit;
                }
            }
            let still = self.ledger.iter().any(|e| e.hidden & bit != 0);
            self.syms[j as usize] = if still { Sym::Unknown } else { Sym::from_bit(truth_after >> j) };
        }
        self.ledger.retain(|e| e.hidden != 0);
        Ok(AuxStep { n_before, n_star, n_after: self.n() })
    }

    /// Normal form, graduation and party checks against the true carpet.
    pub fn check(&self, truth: u64) -> Result<()> {
        let a = self.a;
        let l = self.leftmost();
        if self.syms[..l.min(a + 1) as usize].iter().any(|&s| s != Sym::Zero) {
            return Err(SandpileError::Invariant(format!("not in leftmost-one normal form: {}", self.render())));
        }
        if l != leftmost_one(truth, a) {
            return Err(SandpileError::Invariant(format!(
                "leftmost one {l} differs from the carpet's {}",
                leftmost_one(truth, a)
            )));
        }
        let any_hidden = self.ledger.iter().fold(0u64, |m, e| m | e.hidden);
        for i in 0..=a {
            let s = self.syms[i as usize];
            let hid = any_hidden >> i & 1 == 1;
            if (s == Sym::Unknown) != hid {
                return Err(SandpileError::Invariant(format!("site {i}: symbol {s:?} but hidden={hid}")));
            }
            if s != Sym::Unknown && s != Sym::from_bit(truth >> i) {
                return Err(SandpileError::Invariant(format!("site {i}: revealed {s:?} disagrees with carpet")));
            }
        }
        for e in &self.ledger {
            if e.hidden >> l & 1 == 1 {
                return Err(SandpileError::Invariant(format!("path {} hides the leftmost one {l}", e.s)));
            }
            for run in runs(e.hidden) {
                // a run cut off by the block edge may be a single site
                let edge = run & 1 != 0 || run >> a & 1 != 0;
                if run.count_ones() < 2 && !edge {
                    return Err(SandpileError::Invariant(format!(
                        "hidden set of path {} has the isolated site {} ({})",
                        e.s,
                        run.trailing_zeros(),
                        self.render()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn count_nonzero(syms: &[Sym]) -> u32 {
    syms.iter().filter(|&&s| s != Sym::Zero).count() as u32
}

fn mask_range(lo: i64, hi: i64) -> u64 {
    if hi < lo {
        return 0;
    }
    let width = (hi - lo + 1) as u32;
    let m = if width >= 64 { u64::MAX } else { (1u64 << width) - 1 };
    m << lo
}

/// Maximal runs of ones in `m`, lowest first.
fn runs(mut m: u64) -> Vec<u64> {
    let mut out = Vec::new();
    while m != 0 {
        let low = m & m.wrapping_neg();
        let run = (m + low) & !m;
        let r = run.wrapping_sub(low) & m;
        out.push(r);
        m &= !r;
    }
    out
}
