//! Particle configurations on a finite interval, full topplings, half-topplings
//! and stabilization against fixed instruction stacks.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};
use crate::rng::{derive, BitStream, Orientation, StackLayout, StackSet};

pub const DEFAULT_TOPPLING_CAP: u64 = 1_000_000_000;

/// Counts `eta` and parities `omega` on the interior of `(lo, hi)`; both
/// endpoints absorb.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeState {
    lo: i64,
    hi: i64,
    eta: Vec<u32>,
    omega: Vec<u8>,
    /// Particles absorbed at `lo` and at `hi`.
    pub boundary: [u64; 2],
}

impl LatticeState {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if hi - lo < 2 {
            return Err(SandpileError::Config(format!("interval ({lo}, {hi}) has no interior")));
        }
        let len = (hi - lo - 1) as usize;
        Ok(Self { lo, hi, eta: vec![0; len], omega: vec![0; len], boundary: [0, 0] })
    }

    pub fn from_counts(lo: i64, eta: &[u32]) -> Result<Self> {
        let mut s = Self::new(lo, lo + eta.len() as i64 + 1)?;
        s.eta.copy_from_slice(eta);
        Ok(s)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn sites(&self) -> std::ops::Range<i64> {
        self.lo + 1..self.hi
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        x > self.lo && x < self.hi
    }

    #[inline]
    fn idx(&self, x: i64) -> usize {
        debug_assert!(self.contains(x), "site {x} outside ({}, {})", self.lo, self.hi);
        (x - self.lo - 1) as usize
    }

    #[inline]
    pub fn eta(&self, x: i64) -> u32 {
        self.eta[self.idx(x)]
    }

    #[inline]
    pub fn omega(&self, x: i64) -> u8 {
        self.omega[self.idx(x)]
    }

    pub fn set_eta(&mut self, x: i64, v: u32) {
        let i = self.idx(x);
        self.eta[i] = v;
    }

    pub fn set_omega(&mut self, x: i64, v: u8) {
        let i = self.idx(x);
        self.omega[i] = v & 1;
    }

    pub fn add_particles(&mut self, x: i64, k: u32) {
        let i = self.idx(x);
        self.eta[i] += k;
    }

    pub fn eta_slice(&self) -> &[u32] {
        &self.eta
    }

    pub fn omega_slice(&self) -> &[u8] {
        &self.omega
    }

    pub fn interior_mass(&self) -> u64 {
        self.eta.iter().map(|&e| e as u64).sum()
    }

    pub fn total_mass(&self) -> u64 {
        self.interior_mass() + self.boundary[0] + self.boundary[1]
    }

    #[inline]
    pub fn is_full_legal(&self, x: i64) -> bool {
        self.contains(x) && self.eta(x) >= 2
    }

    #[inline]
    pub fn is_half_legal(&self, x: i64) -> bool {
        if !self.contains(x) {
            return false;
        }
        let e = self.eta(x);
        e >= 2 || (e == 1 && self.omega(x) == 1)
    }

    /// Move one particle from `x` to `x + dir` and flip `omega(x)`.
    #[inline]
    pub fn apply_instruction(&mut self, x: i64, dir: i8) -> Result<()> {
        if !self.contains(x) {
            return Err(SandpileError::OutOfRange(x));
        }
        let i = self.idx(x);
        if self.eta[i] == 0 {
            return Err(SandpileError::IllegalMove { site: x, reason: "no particle to move" });
        }
        self.eta[i] -= 1;
        self.omega[i] ^= 1;
        let y = x + dir as i64;
        if y == self.lo {
            self.boundary[0] += 1;
        } else if y == self.hi {
            self.boundary[1] += 1;
        } else {
            let j = self.idx(y);
            self.eta[j] += 1;
        }
        Ok(())
    }

    /// Topple `x` with its next two instructions.
    pub fn full_topple(&mut self, stacks: &mut StackSet, x: i64) -> Result<()> {
        if !self.is_full_legal(x) {
            return Err(SandpileError::IllegalMove { site: x, reason: "full toppling needs two particles" });
        }
        let d1 = stacks.draw(x, Orientation::Single)?;
        let d2 = stacks.draw(x, Orientation::Single)?;
        self.apply_instruction(x, d1)?;
        self.apply_instruction(x, d2)
    }

    /// Move one particle from `x` with its next instruction.
    pub fn half_topple(&mut self, stacks: &mut StackSet, x: i64) -> Result<()> {
        if !self.is_half_legal(x) {
            return Err(SandpileError::IllegalMove { site: x, reason: "half-toppling not legal" });
        }
        let d = stacks.draw(x, Orientation::Single)?;
        self.apply_instruction(x, d)
    }

    pub fn is_full_stable(&self) -> bool {
        self.eta.iter().all(|&e| e < 2)
    }

    pub fn is_half_stable(&self) -> bool {
        self.sites().all(|x| !self.is_half_legal(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdometerMode {
    Full,
    Half,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Odometer {
    pub lo: i64,
    pub mode: OdometerMode,
    pub counts: Vec<u64>,
}

impl Odometer {
    pub fn new(state: &LatticeState, mode: OdometerMode) -> Self {
        Self { lo: state.lo, mode, counts: vec![0; state.eta.len()] }
    }

    #[inline]
    pub fn at(&self, x: i64) -> u64 {
        let i = x - self.lo - 1;
        if i < 0 || i as usize >= self.counts.len() {
            0
        } else {
            self.counts[i as usize]
        }
    }

    #[inline]
    fn bump(&mut self, x: i64) {
        self.counts[(x - self.lo - 1) as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Order in which unstable sites are toppled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    Leftmost,
    Rightmost,
    Queue,
    Random(u64),
}

enum Scheduler {
    Ordered { set: BTreeSet<i64>, rightmost: bool },
    Queue { q: VecDeque<i64>, queued: Vec<bool>, lo: i64 },
    Random { items: Vec<i64>, pos: Vec<usize>, lo: i64, rng: BitStream },
}

const ABSENT: usize = usize::MAX;

impl Scheduler {
    fn new(policy: Policy, state: &LatticeState) -> Self {
        let n = state.eta.len();
        match policy {
            Policy::Leftmost => Scheduler::Ordered { set: BTreeSet::new(), rightmost: false },
            Policy::Rightmost => Scheduler::Ordered { set: BTreeSet::new(), rightmost: true },
            Policy::Queue => Scheduler::Queue { q: VecDeque::new(), queued: vec![false; n], lo: state.lo },
            Policy::Random(seed) => Scheduler::Random {
                items: Vec::new(),
                pos: vec![ABSENT; n],
                lo: state.lo,
                rng: BitStream::new(seed, 0x5C4E_D01E),
            },
        }
    }

    fn push(&mut self, x: i64) {
        match self {
            Scheduler::Ordered { set, .. } => {
                set.insert(x);
            }
            Scheduler::Queue { q, queued, lo } => {
                let i = (x - *lo - 1) as usize;
                if !queued[i] {
                    queued[i] = true;
                    q.push_back(x);
                }
            }
            Scheduler::Random { items, pos, lo, .. } => {
                let i = (x - *lo - 1) as usize;
                if pos[i] == ABSENT {
                    pos[i] = items.len();
                    items.push(x);
                }
            }
        }
    }

    fn pop(&mut self) -> Option<i64> {
        match self {
            Scheduler::Ordered { set, rightmost } => {
                if *rightmost {
                    set.pop_last()
                } else {
                    set.pop_first()
                }
            }
            Scheduler::Queue { q, queued, lo } => {
                let x = q.pop_front()?;
                queued[(x - *lo - 1) as usize] = false;
                Some(x)
            }
            Scheduler::Random { items, pos, lo, rng } => {
                if items.is_empty() {
                    return None;
                }
                let k = rng.random_range(0..items.len());
                let x = items.swap_remove(k);
                pos[(x - *lo - 1) as usize] = ABSENT;
                if k < items.len() {
                    let moved = items[k];
                    pos[(moved - *lo - 1) as usize] = k;
                }
                Some(x)
            }
        }
    }
}

fn stabilize_generic(
    state: &mut LatticeState,
    stacks: &mut StackSet,
    policy: Policy,
    cap: u64,
    mode: OdometerMode,
) -> Result<Odometer> {
    let legal = |s: &LatticeState, x: i64| match mode {
        OdometerMode::Full => s.is_full_legal(x),
        OdometerMode::Half => s.is_half_legal(x),
    };
    let mut odo = Odometer::new(state, mode);
    let mut sched = Scheduler::new(policy, state);
    for x in state.sites() {
        if legal(state, x) {
            sched.push(x);
        }
    }
    let mut done = 0u64;
    while let Some(x) = sched.pop() {
        if !legal(state, x) {
            continue;
        }
        if done >= cap {
            return Err(SandpileError::CapReached { cap });
        }
        match mode {
            OdometerMode::Full => state.full_topple(stacks, x)?,
            OdometerMode::Half => state.half_topple(stacks, x)?,
        }
        odo.bump(x);
        done += 1;
        for y in [x - 1, x, x + 1] {
            if legal(state, y) {
                sched.push(y);
            }
        }
    }
    Ok(odo)
}

/// Topple until no interior site holds two particles.
pub fn stabilize_full(state: &mut LatticeState, stacks: &mut StackSet, policy: Policy, cap: u64) -> Result<Odometer> {
    stabilize_generic(state, stacks, policy, cap, OdometerMode::Full)
}

/// Half-topple until no interior site is half-legal.
pub fn stabilize_half(state: &mut LatticeState, stacks: &mut StackSet, policy: Policy, cap: u64) -> Result<Odometer> {
    stabilize_generic(state, stacks, policy, cap, OdometerMode::Half)
}

/// Law of the iid initial counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Poisson(f64),
    /// `pmf[j]` is the probability of `j` particles.
    Finite(Vec<f64>),
    Deterministic(u32),
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Poisson(m) => *m,
            InitialLaw::Finite(p) => p.iter().enumerate().map(|(j, q)| j as f64 * q).sum(),
            InitialLaw::Deterministic(k) => *k as f64,
        }
    }

    pub fn max_support(&self) -> Option<u32> {
        match self {
            InitialLaw::Poisson(_) => None,
            InitialLaw::Finite(p) => p.iter().rposition(|&q| q > 0.0).map(|j| j as u32),
            InitialLaw::Deterministic(k) => Some(*k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Poisson(m) if !(m.is_finite() && *m >= 0.0) => {
                Err(SandpileError::Config(format!("Poisson mean must be finite and >= 0, got {m}")))
            }
            InitialLaw::Finite(p) => {
                let s: f64 = p.iter().sum();
                if p.is_empty() || p.iter().any(|&q| !(q >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    Err(SandpileError::Config(format!("pmf must be nonnegative and sum to 1, got sum {s}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Count at `site`, a pure function of `(seed, site)`.
    pub fn sample_at(&self, seed: u64, site: i64) -> u32 {
        let mut r = BitStream::new(derive(seed, 0x1417_1A11), site as u64);
        match self {
            InitialLaw::Deterministic(k) => *k,
            InitialLaw::Poisson(m) => {
                if *m <= 0.0 {
                    0
                } else {
                    Poisson::new(*m).map(|d| d.sample(&mut r) as u32).unwrap_or(0)
                }
            }
            InitialLaw::Finite(p) => {
                let u: f64 = r.next_f64();
                let mut acc = 0.0;
                for (j, q) in p.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        return j as u32;
                    }
                }
                p.iter().rposition(|&q| q > 0.0).unwrap_or(0) as u32
            }
        }
    }
}

/// Full-stabilization odometer at the origin for each window `[-L, L]`, with
/// absorbing sites `±(L+1)`. Windows share the initial field and the stacks.
pub fn activity_proxy(law: &InitialLaw, windows: &[i64], seed: u64, cap: u64) -> Result<Vec<u64>> {
    law.validate()?;
    if windows.windows(2).any(|w| w[0] >= w[1]) || windows.first().is_some_and(|&l| l < 0) {
        return Err(SandpileError::Config("window sizes must be nonnegative and increasing".into()));
    }
    let stack_seed = derive(seed, 0x57AC_C0DE);
    let mut out = Vec::with_capacity(windows.len());
    for &l in windows {
        let mut state = LatticeState::new(-l - 1, l + 1)?;
        for x in -l..=l {
            state.set_eta(x, law.sample_at(seed, x));
        }
        let mut stacks = StackSet::new(-l, l + 1, StackLayout::Uniform, stack_seed)?;
        let odo = stabilize_full(&mut state, &mut stacks, Policy::Queue, cap)?;
        out.push(odo.at(0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stacks_for(state: &LatticeState, seed: u64) -> StackSet {
        StackSet::new(state.lo() + 1, state.hi(), StackLayout::Uniform, seed).unwrap()
    }

    #[test]
    fn single_move_updates_counts_and_parity() {
        let mut s = LatticeState::from_counts(-1, &[0, 2, 0]).unwrap();
        s.apply_instruction(1, 1).unwrap();
        assert_eq!(s.eta_slice(), &[0, 1, 1]);
        assert_eq!(s.omega(1), 1);
    }

    #[test]
    fn move_onto_endpoint_is_absorbed() {
        let mut s = LatticeState::from_counts(-1, &[1, 0, 0]).unwrap();
        s.apply_instruction(0, -1).unwrap();
        assert_eq!(s.boundary, [1, 0]);
        assert_eq!(s.interior_mass(), 0);
        assert_eq!(s.total_mass(), 1);
    }

    #[test]
    fn move_from_empty_site_fails() {
        let mut s = LatticeState::from_counts(-1, &[0, 0, 0]).unwrap();
        assert!(matches!(s.apply_instruction(1, 1), Err(SandpileError::IllegalMove { .. })));
    }

    #[test]
    fn half_legality() {
        let mut s = LatticeState::from_counts(-1, &[1, 1, 0]).unwrap();
        s.set_omega(0, 1);
        assert!(s.is_half_legal(0));
        assert!(!s.is_half_legal(1));
        assert!(!s.is_half_legal(2));
        assert!(!s.is_full_legal(0));
    }

    #[test]
    fn full_topple_consumes_two() {
        let mut s = LatticeState::from_counts(-1, &[0, 3, 0]).unwrap();
        let mut st = stacks_for(&s, 11);
        let d0 = st.peek(1, Orientation::Single, 0).unwrap();
        let d1 = st.peek(1, Orientation::Single, 1).unwrap();
        s.full_topple(&mut st, 1).unwrap();
        assert_eq!(st.consumed(1, Orientation::Single).unwrap(), 2);
        assert_eq!(s.eta(1), 1);
        assert_eq!(s.eta(0) + s.eta(2), 2);
        assert_eq!(s.eta(2) as i32 - s.eta(0) as i32, (d0 + d1) as i32);
        assert_eq!(s.omega(1), 0);
    }

    #[test]
    fn stable_state_has_zero_odometer() {
        let mut s = LatticeState::from_counts(-1, &[1; 9]).unwrap();
        let before = s.clone();
        let mut st = stacks_for(&s, 3);
        let odo = stabilize_full(&mut s, &mut st, Policy::Leftmost, 1000).unwrap();
        assert_eq!(odo.total(), 0);
        assert_eq!(s, before);
    }

    #[test]
    fn policies_agree() {
        let mut eta = vec![0u32; 11];
        eta[5] = 5;
        eta[2] = 2;
        let base = LatticeState::from_counts(-6, &eta).unwrap();
        let mut results = Vec::new();
        for p in [Policy::Leftmost, Policy::Rightmost, Policy::Queue, Policy::Random(1), Policy::Random(2)] {
            let mut s = base.clone();
            let mut st = stacks_for(&s, 42);
            let odo = stabilize_full(&mut s, &mut st, p, 1_000_000).unwrap();
            results.push((s, odo.counts));
        }
        assert!(results.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn cap_is_reported() {
        let mut eta = vec![0u32; 21];
        eta[10] = 12;
        let mut s = LatticeState::from_counts(-11, &eta).unwrap();
        let mut st = stacks_for(&s, 1);
        assert!(matches!(stabilize_full(&mut s, &mut st, Policy::Queue, 3), Err(SandpileError::CapReached { cap: 3 })));
    }

    #[test]
    fn empty_law_gives_zero_proxy() {
        let v = activity_proxy(&InitialLaw::Deterministic(0), &[8, 16, 32], 5, 1000).unwrap();
        assert_eq!(v, vec![0, 0, 0]);
    }
}
