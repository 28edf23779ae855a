//! Carpet/hole toppling on `D_n`: hole bookkeeping, particle roles, the
//! leftmost-priority loop, partial stabilization and the coarse counters.
//!
//! Carpet particles are implicit (one per non-hole site of the domain); free
//! particles are tracked individually, frozen ones as one flag per block.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};
use crate::lattice::{LatticeState, DEFAULT_TOPPLING_CAP};
use crate::layout::BlockLayout;
use crate::rng::{Orientation, StackLayout, StackSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckLevel {
    Off,
    /// Hot block and destination block after every step, whole state at start and end.
    Local,
    /// Whole state after every step.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeParticle {
    pub id: u64,
    pub pos: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hot {
    pub id: u64,
    pub block: usize,
    pub pos: i64,
    /// Whether the current run started from the hole.
    pub from_hole: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    /// Hot particle came back to the hole; the hole moved to `hole`.
    Excursion {
        block: usize,
        hole: i64,
    },
    Froze {
        block: usize,
    },
    Emit {
        block: usize,
        to: i64,
        right: bool,
    },
    Unfreeze {
        block: usize,
        hole: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub primary: Event,
    pub unfreeze: Option<Event>,
    /// Half-topplings spent in this step.
    pub moves: u64,
    /// Hot block was frozen when the step started.
    pub from_frozen: bool,
    /// Excursion or freeze decided without moving (hot already at a hole
    /// that was not the leftmost odd site).
    pub shortcut: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub excursions: u64,
    pub shortcuts: u64,
    pub froze: u64,
    pub emit_left: u64,
    pub emit_right: u64,
    pub unfreezes: u64,
    /// Emissions from an unfrozen block by a hot particle that entered at an
    /// endpoint and left before reaching the hole.
    pub failed_rearrivals: u64,
    pub half_topplings: u64,
    pub checks: u64,
}

/// Valid configurations: one particle per site of `D_n`, at most one empty
/// site per block, extras only at block endpoints.
pub fn validate_config(lattice: &LatticeState, layout: &BlockLayout) -> bool {
    if lattice.lo() != layout.left_end() || lattice.hi() != layout.right_end() {
        return false;
    }
    let mut empties = vec![0u32; layout.n];
    for x in lattice.sites() {
        let e = lattice.eta(x);
        match layout.block_of(x) {
            Some(i) => {
                if e == 0 {
                    empties[i] += 1;
                    if empties[i] > 1 {
                        return false;
                    }
                } else if e > 1 && x != layout.block_start(i) && x != layout.block_end(i) {
                    return false;
                }
            }
            None => {
                if e != 1 {
                    return false;
                }
            }
        }
    }
    true
}

/// Hole of each block and whether its block starts frozen.
pub fn locate_holes(lattice: &LatticeState, layout: &BlockLayout) -> Result<Vec<(i64, bool)>> {
    if !validate_config(lattice, layout) {
        return Err(SandpileError::Invariant("configuration is not valid".into()));
    }
    let mut out = Vec::with_capacity(layout.n);
    for i in 0..layout.n {
        let (s, e) = (layout.block_start(i), layout.block_end(i));
        if let Some(x) = (s..=e).find(|&x| lattice.eta(x) == 0) {
            out.push((x, false));
        } else if let Some(x) = (s..=e).find(|&x| lattice.omega(x) == 1) {
            out.push((x, false));
        } else {
            out.push((e, true));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CarpetState {
    layout: BlockLayout,
    lattice: LatticeState,
    holes: Vec<i64>,
    frozen: Vec<bool>,
    thawed: Vec<Vec<FreeParticle>>,
    active_blocks: BTreeSet<usize>,
    /// Blocks that have had a hot particle.
    activated: Vec<bool>,
    hot: Option<Hot>,
    odometer: Vec<u64>,
    left_moves: Vec<u64>,
    free_total: u64,
    next_id: u64,
    pub tallies: Tallies,
    pub cap: u64,
    pub check_level: CheckLevel,
    pub event_log: Option<Vec<Event>>,
}

impl CarpetState {
    pub fn new(layout: BlockLayout, lattice: LatticeState) -> Result<Self> {
        let located = locate_holes(&lattice, &layout)?;
        let n = layout.n;
        let len = lattice.eta_slice().len();
        let mut st = CarpetState {
            layout,
            holes: located.iter().map(|h| h.0).collect(),
            frozen: located.iter().map(|h| h.1).collect(),
            thawed: vec![Vec::new(); n],
            active_blocks: BTreeSet::new(),
            activated: vec![false; n],
            hot: None,
            odometer: vec![0; len],
            left_moves: vec![0; n],
            free_total: 0,
            next_id: 0,
            tallies: Tallies::default(),
            cap: DEFAULT_TOPPLING_CAP,
            check_level: CheckLevel::Off,
            event_log: None,
            lattice,
        };
        for i in 0..n {
            let (s, e) = (layout.block_start(i), layout.block_end(i));
            for x in s..=e {
                let mut free = st.lattice.eta(x) as i64 - if x == st.holes[i] { 0 } else { 1 };
                if st.frozen[i] && x == e {
                    free -= 1;
                    st.free_total += 1;
                }
                for _ in 0..free.max(0) {
                    st.push_thawed(i, x);
                    st.free_total += 1;
                }
            }
        }
        Ok(st)
    }

    /// Fresh carpet with every block hole empty at `hole_offset` and all parities zero.
    pub fn empty_holes(layout: BlockLayout, hole_offset: i64) -> Result<Self> {
        let mut lat = LatticeState::new(layout.left_end(), layout.right_end())?;
        for x in lat.sites() {
            lat.set_eta(x, 1);
        }
        for i in 0..layout.n {
            lat.set_eta(layout.block_start(i) + hole_offset, 0);
        }
        Self::new(layout, lat)
    }

    fn push_thawed(&mut self, block: usize, pos: i64) {
        let id = self.next_id;
        self.next_id += 1;
        self.thawed[block].push(FreeParticle { id, pos });
        self.active_blocks.insert(block);
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn lattice(&self) -> &LatticeState {
        &self.lattice
    }

    pub fn holes(&self) -> &[i64] {
        &self.holes
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn hot(&self) -> Option<Hot> {
        self.hot
    }

    pub fn thawed(&self, block: usize) -> &[FreeParticle] {
        &self.thawed[block]
    }

    pub fn free_total(&self) -> u64 {
        self.free_total
    }

    pub fn odometer_at(&self, x: i64) -> u64 {
        if self.lattice.contains(x) {
            self.odometer[(x - self.lattice.lo() - 1) as usize]
        } else {
            0
        }
    }

    /// `L_i`: left moves at site `(i-1)K+a+1` that used its `R` stream.
    pub fn left_moves(&self) -> &[u64] {
        &self.left_moves
    }

    /// Number of frozen particles in blocks `n0..=n1`.
    pub fn frozen_count(&self, n0: usize, n1: usize) -> u64 {
        self.frozen[n0..=n1.min(self.layout.n - 1)].iter().filter(|&&f| f).count() as u64
    }

    pub fn leftmost_odd(&self, block: usize) -> Option<i64> {
        let s = self.layout.block_start(block);
        (s..=s + self.layout.a).find(|&x| self.lattice.omega(x) == 1)
    }

    /// Drop a free thawed particle at `x`, which must be a block endpoint or a hole.
    pub fn inject(&mut self, x: i64) -> Result<()> {
        let i = self.layout.block_of(x).ok_or(SandpileError::OutOfRange(x))?;
        if x != self.layout.block_start(i) && x != self.layout.block_end(i) && x != self.holes[i] {
            return Err(SandpileError::Config(format!("free particles enter only at block endpoints, not {x}")));
        }
        self.lattice.add_particles(x, 1);
        self.free_total += 1;
        self.push_thawed(i, x);
        Ok(())
    }

    pub fn is_partially_stable(&self) -> bool {
        self.hot.is_none() && self.active_blocks.is_empty()
    }

    /// Leftmost block with a thawed particle; inside it, the particle in the
    /// hole, else lowest site, then oldest.
    pub fn select_hot(&self) -> Option<(usize, usize)> {
        let &i = self.active_blocks.first()?;
        let list = &self.thawed[i];
        let hole = self.holes[i];
        let k = list.iter().enumerate().min_by_key(|(_, p)| (p.pos != hole, p.pos, p.id)).map(|(k, _)| k)?;
        Some((i, k))
    }

    /// Move the hot particle until it reaches a neighbouring block (or a
    /// domain endpoint), or the hole when `stop_at_hole`. Returns the final site.
    fn walk(&mut self, stacks: &mut StackSet, block: usize, mut pos: i64, stop_at_hole: bool) -> Result<(i64, u64)> {
        let start = self.layout.block_start(block);
        let left_stop = start - self.layout.k + self.layout.a;
        let right_stop = start + self.layout.k;
        let hole = self.holes[block];
        let counted = left_stop + 1;
        let lo = self.lattice.lo();
        let mut moves = 0u64;
        loop {
            if !self.lattice.is_half_legal(pos) {
                return Err(SandpileError::Invariant(format!(
                    "illegal half-toppling of the hot particle at {pos} (eta {}, omega {})",
                    self.lattice.eta(pos),
                    self.lattice.omega(pos)
                )));
            }
            if self.tallies.half_topplings >= self.cap {
                return Err(SandpileError::CapReached { cap: self.cap });
            }
            // transit sites left of the block belong to the transit's right end
            let off = pos - start;
            let orient = if off < 0 {
                Orientation::Right
            } else if off > self.layout.a {
                Orientation::Left
            } else {
                Orientation::Single
            };
            let d = stacks.draw_known(pos, orient)?;
            self.lattice.apply_instruction(pos, d)?;
            self.odometer[(pos - lo - 1) as usize] += 1;
            self.tallies.half_topplings += 1;
            moves += 1;
            if d < 0 && pos == counted && orient == Orientation::Right {
                self.left_moves[block] += 1;
            }
            pos += d as i64;
            if pos == left_stop || pos == right_stop || (stop_at_hole && pos == hole) {
                return Ok((pos, moves));
            }
        }
    }

    /// Hot particle is at the hole of block `i`: relocate the hole to the
    /// leftmost odd site, or freeze the block.
    fn arrive(&mut self, i: usize, hot: Hot) -> Event {
        match self.leftmost_odd(i) {
            Some(y) => {
                self.holes[i] = y;
                self.hot = Some(Hot { id: hot.id, block: i, pos: y, from_hole: true });
                self.tallies.excursions += 1;
                Event::Excursion { block: i, hole: y }
            }
            None => {
                self.holes[i] = self.layout.block_end(i);
                self.frozen[i] = true;
                self.hot = None;
                self.tallies.froze += 1;
                Event::Froze { block: i }
            }
        }
    }

    fn emit(&mut self, i: usize, hot: Hot, to: i64) -> Event {
        self.hot = None;
        let right = to == self.layout.block_start(i) + self.layout.k;
        if right {
            self.tallies.emit_right += 1;
        } else {
            self.tallies.emit_left += 1;
        }
        if self.lattice.contains(to) {
            let j = self.layout.block_of(to).expect("emission lands in a block");
            self.thawed[j].push(FreeParticle { id: hot.id, pos: to });
            self.active_blocks.insert(j);
        }
        Event::Emit { block: i, to, right }
    }

    /// One loop iteration: designate a hot particle if needed, then run it to
    /// its next event. `None` at partial stabilization.
    pub fn step(&mut self, stacks: &mut StackSet) -> Result<Option<StepOutcome>> {
        let hot = match self.hot {
            Some(h) => h,
            None => {
                let Some((i, k)) = self.select_hot() else { return Ok(None) };
                let p = self.thawed[i].remove(k);
                if self.thawed[i].is_empty() {
                    self.active_blocks.remove(&i);
                }
                self.activated[i] = true;
                let h = Hot { id: p.id, block: i, pos: p.pos, from_hole: p.pos == self.holes[i] };
                self.hot = Some(h);
                h
            }
        };
        let i = hot.block;
        let before = self.tallies.half_topplings;
        let mut outcome = if self.frozen[i] {
            let (to, moves) = self.walk(stacks, i, hot.pos, false)?;
            let primary = self.emit(i, hot, to);
            let unfreeze = self.leftmost_odd(i).map(|y| {
                self.frozen[i] = false;
                self.holes[i] = y;
                self.tallies.unfreezes += 1;
                self.push_thawed(i, y);
                Event::Unfreeze { block: i, hole: y }
            });
            StepOutcome { primary, unfreeze, moves, from_frozen: true, shortcut: false }
        } else if hot.pos == self.holes[i] && self.leftmost_odd(i) != Some(hot.pos) {
            self.tallies.shortcuts += 1;
            let primary = self.arrive(i, hot);
            StepOutcome { primary, unfreeze: None, moves: 0, from_frozen: false, shortcut: true }
        } else {
            let (to, moves) = self.walk(stacks, i, hot.pos, true)?;
            let primary = if to == self.holes[i] {
                self.arrive(i, hot)
            } else {
                if !hot.from_hole {
                    self.tallies.failed_rearrivals += 1;
                }
                self.emit(i, hot, to)
            };
            StepOutcome { primary, unfreeze: None, moves, from_frozen: false, shortcut: false }
        };
        outcome.moves = self.tallies.half_topplings - before;
        if let Some(log) = self.event_log.as_mut() {
            log.push(outcome.primary);
            if let Some(u) = outcome.unfreeze {
                log.push(u);
            }
        }
        match self.check_level {
            CheckLevel::Off => {}
            CheckLevel::Full => self.check_all()?,
            CheckLevel::Local => {
                self.check_block(i)?;
                if let Event::Emit { to, .. } = outcome.primary {
                    if let Some(j) = self.layout.block_of(to) {
                        self.check_block(j)?;
                    }
                }
            }
        }
        Ok(Some(outcome))
    }

    /// Run the loop until no thawed particle remains.
    pub fn run_to_partial_stabilization(&mut self, stacks: &mut StackSet) -> Result<()> {
        if self.check_level != CheckLevel::Off {
            self.check_all()?;
        }
        while self.step(stacks)?.is_some() {}
        if self.check_level != CheckLevel::Off {
            self.check_all()?;
            self.check_end()?;
        }
        Ok(())
    }

    fn free_at(&self, x: i64) -> i64 {
        let mut c = 0;
        if let Some(i) = self.layout.block_of(x) {
            c += self.thawed[i].iter().filter(|p| p.pos == x).count() as i64;
            if self.frozen[i] && x == self.layout.block_end(i) {
                c += 1;
            }
        }
        if self.hot.is_some_and(|h| h.pos == x) {
            c += 1;
        }
        c
    }

    fn check_site(&self, x: i64) -> Result<()> {
        let carpet = match self.layout.block_of(x) {
            Some(i) if self.holes[i] == x => 0,
            _ => 1,
        };
        let expect = carpet + self.free_at(x);
        if self.lattice.eta(x) as i64 != expect {
            return Err(SandpileError::Invariant(format!(
                "site {x}: eta {} but carpet plus free particles give {expect}",
                self.lattice.eta(x)
            )));
        }
        Ok(())
    }

    /// (P1)-(P5) and (F2) on one block.
    pub fn check_block(&self, i: usize) -> Result<()> {
        let (s, e) = (self.layout.block_start(i), self.layout.block_end(i));
        let hole = self.holes[i];
        if hole < s || hole > e {
            return Err(SandpileError::Invariant(format!("block {i}: hole {hole} outside [{s}, {e}]")));
        }
        for x in s..=e {
            self.check_site(x)?;
        }
        for p in &self.thawed[i] {
            if p.pos != s && p.pos != e && p.pos != hole {
                return Err(SandpileError::Invariant(format!(
                    "block {i}: free particle at {} is neither at an endpoint nor in the hole",
                    p.pos
                )));
            }
            if self.activated[i] && self.hot.map(|h| h.block) == Some(i) && p.pos != s && p.pos != e {
                return Err(SandpileError::Invariant(format!(
                    "block {i}: non-hot free particle at {} while the block is hot",
                    p.pos
                )));
            }
        }
        if self.frozen[i] && hole != e {
            return Err(SandpileError::Invariant(format!("block {i}: frozen but hole at {hole}")));
        }
        if let Some(h) = self.hot.filter(|h| h.block == i && h.pos == hole && !self.frozen[i]) {
            if self.leftmost_odd(i) != Some(h.pos) {
                return Err(SandpileError::Invariant(format!(
                    "block {i}: hot particle in a hole that is not the leftmost odd site"
                )));
            }
        }
        Ok(())
    }

    pub fn check_all(&self) -> Result<()> {
        for i in 0..self.layout.n {
            self.check_block(i)?;
        }
        for x in self.lattice.sites() {
            if self.layout.block_of(x).is_none() {
                self.check_site(x)?;
            }
        }
        let live: u64 = self.thawed.iter().map(|v| v.len() as u64).sum::<u64>()
            + self.frozen.iter().filter(|&&f| f).count() as u64
            + self.hot.is_some() as u64;
        let absorbed = self.lattice.boundary[0] + self.lattice.boundary[1];
        if live + absorbed != self.free_total {
            return Err(SandpileError::Invariant(format!(
                "free particles not conserved: {live} live + {absorbed} absorbed vs {}",
                self.free_total
            )));
        }
        Ok(())
    }

    /// (F5): no thawed particles, at most one particle per site.
    pub fn check_end(&self) -> Result<()> {
        if !self.is_partially_stable() {
            return Err(SandpileError::Invariant("thawed particles remain".into()));
        }
        if let Some(x) = self.lattice.sites().find(|&x| self.lattice.eta(x) > 1) {
            return Err(SandpileError::Invariant(format!(
                "site {x} holds {} particles at the end",
                self.lattice.eta(x)
            )));
        }
        Ok(())
    }
}

/// Stacks on the interior of `layout`'s domain.
pub fn carpet_stacks(layout: &BlockLayout, seed: u64) -> Result<StackSet> {
    StackSet::new(layout.left_end() + 1, layout.right_end(), StackLayout::Blocks(*layout), seed)
}

/// Summary of one partial stabilization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarpetRun {
    pub frozen: Vec<u8>,
    pub left_moves: Vec<u64>,
    pub odometer_at_starts: Vec<u64>,
    pub boundary: [u64; 2],
    pub free_start: u64,
    pub tallies: Tallies,
}

pub fn run_partial_stabilization(state: &mut CarpetState, stacks: &mut StackSet) -> Result<CarpetRun> {
    state.run_to_partial_stabilization(stacks)?;
    Ok(summarize(state))
}

pub fn summarize(state: &CarpetState) -> CarpetRun {
    let l = state.layout;
    CarpetRun {
        frozen: state.frozen.iter().map(|&f| f as u8).collect(),
        left_moves: state.left_moves.clone(),
        odometer_at_starts: (0..l.n).map(|i| state.odometer_at(l.block_start(i))).collect(),
        boundary: state.lattice.boundary,
        free_start: state.free_total,
        tallies: state.tallies.clone(),
    }
}

/// `H_i = {odometer(iK) >= beta n}` for every block.
pub fn check_h_events(odometer_at_starts: &[u64], beta: f64, n: usize) -> Vec<bool> {
    odometer_at_starts.iter().map(|&m| m as f64 >= beta * n as f64).collect()
}

/// `H(n0, n1)`: `H_{n0-1}` fails and every `H_i` for `i` in `n0..=n1` holds.
pub fn h_window(h: &[bool], n0: usize, n1: usize) -> bool {
    let before = n0 > 0 && h[n0 - 1];
    !before && h[n0..=n1].iter().all(|&b| b)
}

/// Coarse counters `L_i^j(s)` and `F_i^j(s)` for `i <= j`: the dynamics on
/// the first `j+1` blocks, with `(j+1)K` absorbing, fed with `s` extra
/// particles at `jK+a`. Extras enter one at a time, each after partial
/// stabilization, which is how arrivals from block `j+1` are seen under the
/// leftmost priority rule.
pub fn coarse_counters(
    layout: &BlockLayout,
    lattice: &LatticeState,
    j: usize,
    s: u64,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u8>)> {
    if j >= layout.n {
        return Err(SandpileError::Config(format!("block {j} outside 0..{}", layout.n)));
    }
    let sub = BlockLayout { n: j + 1, ..*layout };
    let mut lat = LatticeState::new(sub.left_end(), sub.right_end())?;
    for x in lat.sites() {
        lat.set_eta(x, lattice.eta(x));
        lat.set_omega(x, lattice.omega(x));
    }
    let mut state = CarpetState::new(sub, lat)?;
    state.cap = DEFAULT_TOPPLING_CAP;
    let mut stacks = carpet_stacks(&sub, seed)?;
    state.run_to_partial_stabilization(&mut stacks)?;
    for _ in 0..s {
        state.inject(sub.block_end(j))?;
        state.run_to_partial_stabilization(&mut stacks)?;
    }
    Ok((state.left_moves.clone(), state.frozen.iter().map(|&f| f as u8).collect()))
}
