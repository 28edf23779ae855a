//! Attempted emissions of a single block fed at its right end.

use serde::{Deserialize, Serialize};

use super::aux::leftmost_one;
use super::path::{DirectWalker, Side, Stop, Trace, Walker};
use super::spectral::FrozenEscape;
use crate::carpet::{carpet_stacks, CarpetState, Event};
use crate::error::{Result, SandpileError};
use crate::lattice::LatticeState;
use crate::layout::BlockLayout;
use crate::rng::StackSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub k: u64,
    /// `Left(k)`: left emissions so far.
    pub left: u64,
    /// `F(k)`.
    pub frozen: bool,
    /// `e(k)`: hole arrivals handled so far.
    pub e: u64,
    /// `None` when the attempt ended by freezing.
    pub direction: Option<Side>,
    pub from_frozen: bool,
    /// The hot particle was injected at `a` rather than found in the hole.
    pub injected: bool,
    pub failed_rearrival: bool,
}

pub trait EmissionBackend {
    fn attempt(&mut self) -> Result<AttemptRecord>;

    fn run(&mut self, k_max: u64) -> Result<Vec<AttemptRecord>> {
        (0..k_max).map(|_| self.attempt()).collect()
    }
}

/// Direct backend: carpet `omega`, hole and frozen flag only.
#[derive(Debug, Clone)]
pub struct DirectEmissions {
    walker: DirectWalker,
    escape: Option<std::sync::Arc<FrozenEscape>>,
    a: i64,
    omega: u64,
    hole: i64,
    frozen: bool,
    pending: bool,
    pending_start: bool,
    left: u64,
    e: u64,
    k: u64,
}

impl DirectEmissions {
    /// Start with the hole empty at the leftmost one of `omega` (or frozen if `omega = 0`).
    pub fn new(a: i64, k: i64, omega: u64, seed: u64) -> Result<Self> {
        let walker = DirectWalker::new(a, k, seed)?;
        let frozen = omega == 0;
        let hole = if frozen { a } else { leftmost_one(omega, a) };
        Ok(Self {
            walker,
            escape: None,
            a,
            omega,
            hole,
            frozen,
            pending: false,
            pending_start: false,
            left: 0,
            e: 0,
            k: 0,
        })
    }

    /// Sample frozen-block escapes from their exact law instead of stepping.
    pub fn with_escape_law(mut self, law: std::sync::Arc<FrozenEscape>) -> Self {
        self.escape = Some(law);
        self
    }

    pub fn omega(&self) -> u64 {
        self.omega
    }

    fn walk(&mut self, start: i64, target: Option<i64>) -> Result<Stop> {
        let mut tr = Trace::new(start, self.a, false);
        let s = self.walker.walk(start, target, &mut tr)?;
        self.omega ^= tr.parity;
        Ok(s)
    }

    /// Hot particle at the hole: move the hole to the leftmost odd site, or freeze.
    fn relocate(&mut self) -> bool {
        self.e += 1;
        if self.omega == 0 {
            self.frozen = true;
            self.hole = self.a;
            false
        } else {
            self.hole = leftmost_one(self.omega, self.a);
            true
        }
    }

    fn record(&mut self, direction: Option<Side>, from_frozen: bool, failed: bool) -> AttemptRecord {
        let injected = !self.pending_start;
        if direction == Some(Side::Left) {
            self.left += 1;
        }
        AttemptRecord {
            k: self.k,
            left: self.left,
            frozen: self.frozen,
            e: self.e,
            direction,
            from_frozen,
            injected,
            failed_rearrival: failed,
        }
    }
}

impl EmissionBackend for DirectEmissions {
    fn attempt(&mut self) -> Result<AttemptRecord> {
        self.k += 1;
        self.pending_start = std::mem::take(&mut self.pending);
        let start = if self.pending_start { self.hole } else { self.a };
        if self.frozen {
            let side = match &self.escape {
                Some(law) if start == self.a => {
                    let (side, parity) = law.sample(self.walker.rng());
                    self.omega ^= parity;
                    side
                }
                _ => match self.walk(start, None)? {
                    Stop::Escape(side) => side,
                    Stop::Target => return Err(SandpileError::Invariant("frozen run ended inside the block".into())),
                },
            };
            if self.omega != 0 {
                self.frozen = false;
                self.hole = leftmost_one(self.omega, self.a);
                self.pending = true;
            }
            return Ok(self.record(Some(side), true, false));
        }
        let mut hot = start;
        if hot == self.hole && leftmost_one(self.omega, self.a) != self.hole && !self.relocate() {
            return Ok(self.record(None, false, false));
        }
        loop {
            let from_hole = hot == self.hole;
            let hole = self.hole;
            match self.walk(hot, Some(hole))? {
                Stop::Target => {
                    if !self.relocate() {
                        return Ok(self.record(None, false, false));
                    }
                    hot = self.hole;
                }
                Stop::Escape(side) => return Ok(self.record(Some(side), false, !from_hole)),
            }
        }
    }
}

/// Literal backend: the carpet/hole procedure on a one-block domain.
#[derive(Debug, Clone)]
pub struct LiteralEmissions {
    pub state: CarpetState,
    stacks: StackSet,
    left: u64,
    e: u64,
    k: u64,
}

impl LiteralEmissions {
    pub fn new(a: i64, k: i64, omega: u64, seed: u64) -> Result<Self> {
        let layout = BlockLayout::with_period(a, k, 1)?;
        let mut lat = LatticeState::new(layout.left_end(), layout.right_end())?;
        for x in lat.sites() {
            lat.set_eta(x, 1);
        }
        for i in 0..=a {
            lat.set_omega(i, (omega >> i) as u8 & 1);
        }
        if omega != 0 {
            lat.set_eta(leftmost_one(omega, a), 0);
        }
        let state = CarpetState::new(layout, lat)?;
        let stacks = carpet_stacks(&layout, seed)?;
        Ok(Self { state, stacks, left: 0, e: 0, k: 0 })
    }
}

impl EmissionBackend for LiteralEmissions {
    fn attempt(&mut self) -> Result<AttemptRecord> {
        self.k += 1;
        let a = self.state.layout().a;
        let injected = self.state.thawed(0).is_empty() && self.state.hot().is_none();
        if injected {
            self.state.inject(a)?;
        }
        let from_frozen = self.state.frozen()[0];
        let failed_before = self.state.tallies.failed_rearrivals;
        loop {
            let out = self
                .state
                .step(&mut self.stacks)?
                .ok_or_else(|| SandpileError::Invariant("block stabilized during an attempt".into()))?;
            match out.primary {
                Event::Excursion { .. } => self.e += 1,
                Event::Froze { .. } => {
                    self.e += 1;
                    return Ok(AttemptRecord {
                        k: self.k,
                        left: self.left,
                        frozen: true,
                        e: self.e,
                        direction: None,
                        from_frozen,
                        injected,
                        failed_rearrival: false,
                    });
                }
                Event::Emit { right, .. } => {
                    if !right {
                        self.left += 1;
                    }
                    return Ok(AttemptRecord {
                        k: self.k,
                        left: self.left,
                        frozen: self.state.frozen()[0],
                        e: self.e,
                        direction: Some(if right { Side::Right } else { Side::Left }),
                        from_frozen,
                        injected,
                        failed_rearrival: self.state.tallies.failed_rearrivals > failed_before,
                    });
                }
                Event::Unfreeze { .. } => {}
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionSummary {
    pub attempts: u64,
    pub emissions: u64,
    pub right: u64,
    pub froze: u64,
    /// Injected attempts that follow an emission.
    pub after_emission: u64,
    pub failed_after_emission: u64,
    /// Attempts `k` with `Left(k+2) > Left(k)`, out of `windows`.
    pub left_advances: u64,
    pub windows: u64,
    pub frozen_followups: u64,
    pub frozen_followups_reached: u64,
}

pub fn summarize(records: &[AttemptRecord]) -> EmissionSummary {
    let mut s = EmissionSummary { attempts: records.len() as u64, ..Default::default() };
    for (i, r) in records.iter().enumerate() {
        match r.direction {
            Some(d) => {
                s.emissions += 1;
                if d == Side::Right {
                    s.right += 1;
                }
            }
            None => s.froze += 1,
        }
        if i > 0 {
            let prev = &records[i - 1];
            if prev.direction.is_some() && r.injected && !r.from_frozen {
                s.after_emission += 1;
                if r.failed_rearrival {
                    s.failed_after_emission += 1;
                }
            }
            if prev.frozen {
                s.frozen_followups += 1;
                if r.direction.is_some() {
                    s.frozen_followups_reached += 1;
                }
            }
        }
        let base = if i == 0 { 0 } else { records[i - 1].left };
        if i + 1 < records.len() {
            s.windows += 1;
            if records[i + 1].left > base {
                s.left_advances += 1;
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_attempt_always_reaches_a_neighbour() {
        for seed in 0..10 {
            let mut b = DirectEmissions::new(6, 36, 0, seed).unwrap();
            let r = b.attempt().unwrap();
            assert!(r.from_frozen);
            assert!(r.direction.is_some());
            let mut l = LiteralEmissions::new(6, 36, 0, seed).unwrap();
            let r = l.attempt().unwrap();
            assert!(r.from_frozen);
            assert!(r.direction.is_some());
        }
    }

    #[test]
    fn records_are_cumulative() {
        let mut b = DirectEmissions::new(8, 64, 0b10, 3).unwrap();
        let recs = b.run(2000).unwrap();
        for w in recs.windows(2) {
            assert!(w[1].left >= w[0].left);
            assert!(w[1].e >= w[0].e);
            if w[0].frozen {
                assert!(w[1].direction.is_some());
            }
        }
        let s = summarize(&recs);
        assert_eq!(s.attempts, 2000);
        assert_eq!(s.emissions + s.froze, 2000);
    }

    #[test]
    fn escape_law_matches_stepping() {
        let (a, k) = (8, 512);
        let law = std::sync::Arc::new(FrozenEscape::new(a, k).unwrap());
        let mut fast = DirectEmissions::new(a, k, 0b100, 5).unwrap().with_escape_law(law);
        let mut slow = DirectEmissions::new(a, k, 0b100, 6).unwrap();
        let f = summarize(&fast.run(20_000).unwrap());
        let s = summarize(&slow.run(20_000).unwrap());
        for (x, y) in [(f.right, s.right), (f.froze, s.froze), (f.emissions, s.emissions)] {
            let (x, y) = (x as f64 / 20_000.0, y as f64 / 20_000.0);
            assert!((x - y).abs() < 4.0 * (0.5 / 20_000f64).sqrt(), "{f:?} {s:?}");
        }
    }

    #[test]
    fn literal_backend_checks_hold() {
        let mut l = LiteralEmissions::new(4, 16, 0b110, 9).unwrap();
        l.state.check_level = crate::carpet::CheckLevel::Full;
        let recs = l.run(300).unwrap();
        assert_eq!(recs.len(), 300);
    }
}
