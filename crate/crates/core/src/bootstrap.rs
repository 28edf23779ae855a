//! Alternating IDLA and carpet/hole stabilization on nested intervals.

use serde::{Deserialize, Serialize};

use crate::carpet::{validate_config, CarpetState, CheckLevel};
use crate::error::{Result, SandpileError};
use crate::lattice::{InitialLaw, LatticeState, DEFAULT_TOPPLING_CAP};
use crate::layout::BlockLayout;
use crate::rng::{derive, Orientation, StackLayout, StackSet};

const IDLA_SALT: u64 = 0x1D1A;
const CARPET_SALT: u64 = 0xCA4E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub a: i64,
    pub k: i64,
    pub m_tilde0: u64,
    pub gamma: f64,
    pub delta: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// `mu[j]`: probability of `j` particles.
    pub mu: Vec<f64>,
    pub seed: u64,
    /// Condition on every site of the first interval starting with `L*` particles.
    pub seed_first_interval: bool,
    /// Extra blocks added per stage on top of `floor(M(1+gamma))`; 0 is the plain rule.
    pub growth_min: u64,
    pub cap: u64,
    pub check_level: CheckLevel,
    /// When false, stop each stage at the step-3 entry check.
    pub run_carpet: bool,
}

impl StageConfig {
    pub fn new(a: i64, k: i64, m_tilde0: u64, mu: Vec<f64>, seed: u64) -> Self {
        Self {
            a,
            k,
            m_tilde0,
            gamma: 0.02,
            delta: 4e-4,
            beta: 4e-4,
            epsilon: 1.0 / 200.0,
            mu,
            seed,
            seed_first_interval: true,
            growth_min: 0,
            cap: DEFAULT_TOPPLING_CAP,
            check_level: CheckLevel::Off,
            run_carpet: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a <= 0 || self.a % 2 != 0 {
            return Err(SandpileError::Config(format!(
                "bootstrap needs an even block width a (blocks start at -a/2 + mK), got a = {}",
                self.a
            )));
        }
        BlockLayout::with_period(self.a, self.k, 1)?;
        if self.m_tilde0 == 0 {
            return Err(SandpileError::Config("M0 must be at least 1".into()));
        }
        InitialLaw::Finite(self.mu.clone()).validate()?;
        if self.mu.iter().skip(2).sum::<f64>() <= 0.0 {
            return Err(SandpileError::Config("mu must put positive mass on {j >= 2}".into()));
        }
        Ok(())
    }

    pub fn law(&self) -> InitialLaw {
        InitialLaw::Finite(self.mu.clone())
    }

    pub fn l_star(&self) -> u32 {
        self.law().max_support().unwrap_or(0)
    }

    pub fn m_tilde(&self, i: usize) -> u64 {
        let mut m = self.m_tilde0;
        for _ in 0..i {
            let grown = (m as f64 * (1.0 + self.gamma)).floor() as u64;
            m = grown.max(m + self.growth_min);
        }
        m
    }

    /// `M_i = (M~_i + 1) K - a/2`.
    pub fn m(&self, i: usize) -> i64 {
        (self.m_tilde(i) as i64 + 1) * self.k - self.a / 2
    }

    /// Layout whose domain is `(-M_i, M_i)`.
    pub fn layout(&self, i: usize) -> Result<BlockLayout> {
        let mt = self.m_tilde(i) as i64;
        Ok(BlockLayout::with_period(self.a, self.k, (2 * mt + 1) as usize)?.with_origin(-self.a / 2 - mt * self.k))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub m_tilde: u64,
    pub m: i64,
    pub event1: bool,
    pub event2: bool,
    pub event3: bool,
    pub event4_plus: Option<bool>,
    pub event4_minus: Option<bool>,
    pub density_left: f64,
    pub density_right: f64,
    pub s_plus: i64,
    pub s_minus: i64,
    pub s_expected: f64,
    /// Particles left at the sources after the second step (left, right).
    pub source_left: u64,
    pub source_right: u64,
    pub valid_at_step3: bool,
    pub carpet_ran: bool,
    pub frozen_blocks: u64,
    pub boundary_left: u64,
    pub boundary_right: u64,
    pub odometer_min: u64,
    pub odometer_origin: u64,
    /// Change of the center of mass over the stage, and over its third step.
    pub d_stage: i64,
    pub d_third: i64,
    pub mass: u64,
    pub idla_moves: u64,
    pub half_topplings: u64,
    pub violations: u64,
    pub first_violation: Option<String>,
}

impl StageReport {
    pub fn success(&self) -> bool {
        self.event1 && self.event2 && self.event3
    }

    /// Which event failed first, if any.
    pub fn failure(&self) -> Option<&'static str> {
        if !self.event1 {
            Some("event1")
        } else if !self.event2 {
            Some("event2")
        } else if !self.event3 {
            Some("event3")
        } else {
            None
        }
    }

    fn violate(&mut self, msg: String) {
        self.violations += 1;
        self.first_violation.get_or_insert(msg);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    /// Number of successful stages.
    pub survival: usize,
    pub stages: Vec<StageReport>,
    pub first_failure: Option<String>,
}

/// Particle counts and parities on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    lo: i64,
    eta: Vec<u32>,
    omega: Vec<u8>,
}

impl Line {
    pub fn new(lo: i64, hi: i64) -> Self {
        let n = (hi - lo + 1) as usize;
        Self { lo, eta: vec![0; n], omega: vec![0; n] }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.eta.len() as i64 - 1
    }

    #[inline]
    fn idx(&self, x: i64) -> usize {
        (x - self.lo) as usize
    }

    pub fn eta(&self, x: i64) -> u32 {
        self.eta[self.idx(x)]
    }

    pub fn set_eta(&mut self, x: i64, v: u32) {
        let i = self.idx(x);
        self.eta[i] = v;
    }

    pub fn omega(&self, x: i64) -> u8 {
        self.omega[self.idx(x)]
    }

    pub fn mass(&self, lo: i64, hi: i64) -> u64 {
        (lo..=hi).map(|x| self.eta(x) as u64).sum()
    }

    fn step(&mut self, x: i64, dir: i8) -> i64 {
        let i = self.idx(x);
        self.eta[i] -= 1;
        self.omega[i] ^= 1;
        let y = x + dir as i64;
        let j = self.idx(y);
        self.eta[j] += 1;
        y
    }
}

/// `sum_j rho(j) eta(j)` over `[lo, hi]`, `rho` the identity or clamped to
/// `[(m0-1)K + a/2, (m1+1)K - a/2]`.
pub fn center_of_mass(line: &Line, lo: i64, hi: i64, clamp: Option<(i64, i64, i64, i64)>) -> i64 {
    let rho = |j: i64| match clamp {
        None => j,
        Some((a, k, m0, m1)) => j.clamp((m0 - 1) * k + a / 2, (m1 + 1) * k - a / 2),
    };
    (lo..=hi).map(|j| rho(j) * line.eta(j) as i64).sum()
}

/// Walk one particle from `x` until it reaches an empty site of `(lo, hi)` or one of `lo`, `hi`.
fn idla_walk(
    line: &mut Line,
    stacks: &mut StackSet,
    mut x: i64,
    lo: i64,
    hi: i64,
    cap: u64,
    moves: &mut u64,
) -> Result<i64> {
    loop {
        if *moves >= cap {
            return Err(SandpileError::CapReached { cap });
        }
        let d = stacks.draw(x, Orientation::Single)?;
        // the walker adds itself to the target before the check
        let settled_before = line.eta(x + d as i64) == 0;
        x = line.step(x, d);
        *moves += 1;
        if x == lo || x == hi || settled_before {
            return Ok(x);
        }
    }
}

/// IDLA on `(lo, hi)` with `lo` and `hi` freezing: sites are scanned left to
/// right and each excess particle walks until it is alone or frozen.
pub fn idla_sweep(line: &mut Line, stacks: &mut StackSet, lo: i64, hi: i64, cap: u64) -> Result<u64> {
    let mut moves = 0;
    for x in lo + 1..hi {
        while line.eta(x) >= 2 {
            idla_walk(line, stacks, x, lo, hi, cap, &mut moves)?;
        }
    }
    Ok(moves)
}

/// Release particles from `sources` in turn, each walking until it settles on
/// an empty site of `(lo, hi)` or freezes at `lo` or `hi`, until no target
/// site is empty or every source is down to its last particle.
pub fn idla_fill(
    line: &mut Line,
    stacks: &mut StackSet,
    sources: &[i64],
    targets: &[(i64, i64)],
    lo: i64,
    hi: i64,
    cap: u64,
) -> Result<u64> {
    let in_target = |x: i64| targets.iter().any(|&(s, e)| x >= s && x <= e);
    let mut empty = targets.iter().flat_map(|&(s, e)| s..=e).filter(|&x| line.eta(x) == 0).count();
    let mut moves = 0;
    let mut turn = 0;
    while empty > 0 {
        let Some(src) = (0..sources.len()).map(|j| sources[(turn + j) % sources.len()]).find(|&s| line.eta(s) >= 2)
        else {
            break;
        };
        turn = (sources.iter().position(|&s| s == src).unwrap() + 1) % sources.len();
        let end = idla_walk(line, stacks, src, lo, hi, cap, &mut moves)?;
        if end != lo && end != hi && in_target(end) {
            empty -= 1;
        }
    }
    Ok(moves)
}

/// The global line, the IDLA stacks and the carpet stacks, shared by all stages.
pub struct Bootstrap {
    pub cfg: StageConfig,
    pub line: Line,
    idla: StackSet,
    carpet: StackSet,
    max_stages: usize,
}

impl Bootstrap {
    pub fn new(cfg: StageConfig, max_stages: usize) -> Result<Self> {
        cfg.validate()?;
        let stages = max_stages.max(1);
        let m_last = cfg.m(stages - 1);
        let mut line = Line::new(-m_last, m_last);
        let law = cfg.law();
        let m0 = cfg.m(0);
        let l_star = cfg.l_star();
        for x in -m_last..=m_last {
            let v = if cfg.seed_first_interval && x.abs() <= m0 { l_star } else { law.sample_at(cfg.seed, x) };
            line.set_eta(x, v);
        }
        let layout = cfg.layout(stages - 1)?;
        let idla = StackSet::new(-m_last, m_last + 1, StackLayout::Uniform, derive(cfg.seed, IDLA_SALT))?;
        let carpet = StackSet::new(-m_last, m_last + 1, StackLayout::Blocks(layout), derive(cfg.seed, CARPET_SALT))?;
        Ok(Self { cfg, line, idla, carpet, max_stages: stages })
    }

    pub fn run_stage(&mut self, i: usize) -> Result<StageReport> {
        if i >= self.max_stages {
            return Err(SandpileError::Config(format!("stage {i} beyond the allocated {}", self.max_stages)));
        }
        let cfg = self.cfg.clone();
        let (a, k) = (cfg.a, cfg.k);
        let mt = cfg.m_tilde(i);
        let m = cfg.m(i);
        let (inner_lo, inner_hi) = if i == 0 { (-a / 2, -a / 2) } else { (-cfg.m(i - 1), cfg.m(i - 1)) };
        let mut rep = StageReport { stage: i, m_tilde: mt, m, ..Default::default() };
        let before = self.line.clone();
        let mass0 = self.line.mass(-m, m);
        rep.mass = mass0;

        if i >= 1 {
            let s_plus: i64 = (inner_hi + 1..=m).map(|j| j * self.line.eta(j) as i64).sum();
            let s_minus: i64 = (-m..inner_lo).map(|j| j * self.line.eta(j) as i64).sum();
            let expected = cfg.law().mean() * ((m - inner_hi) as f64) * ((m + inner_hi + 1) as f64) / 2.0;
            let tol = 0.01 * cfg.gamma * mt as f64 * m as f64;
            rep.s_plus = s_plus;
            rep.s_minus = s_minus;
            rep.s_expected = expected;
            rep.event4_plus = Some((s_plus as f64 - expected).abs() <= tol);
            rep.event4_minus = Some((s_minus as f64 + expected).abs() <= tol);
        }

        // step 1
        let mut moves = idla_sweep(&mut self.line, &mut self.idla, -m, inner_lo, cfg.cap)?;
        moves += idla_sweep(&mut self.line, &mut self.idla, inner_hi, m, cfg.cap)?;
        for x in (-m + 1..inner_lo).chain(inner_hi + 1..m) {
            if self.line.eta(x) > 1 {
                rep.violate(format!("site {x} holds {} particles after the first step", self.line.eta(x)));
            }
        }
        self.check_mass(&mut rep, -m, m, mass0, "first step");
        let density = |line: &Line, s: i64, e: i64| {
            if e < s {
                1.0
            } else {
                line.mass(s, e) as f64 / (e - s + 1) as f64
            }
        };
        rep.density_left = density(&self.line, -m + 1, inner_lo - 1);
        rep.density_right = density(&self.line, inner_hi + 1, m - 1);
        let band = |d: f64| (1.0 - 1.0 / (3.0 * k as f64)..=1.0).contains(&d);
        rep.event1 = band(rep.density_left)
            && band(rep.density_right)
            && rep.event4_plus.unwrap_or(true)
            && rep.event4_minus.unwrap_or(true);

        // step 2
        let sources: Vec<i64> = if inner_lo == inner_hi { vec![inner_lo] } else { vec![inner_lo, inner_hi] };
        let targets = [(-m + 1, inner_lo - 1), (inner_hi + 1, m - 1)];
        moves += idla_fill(&mut self.line, &mut self.idla, &sources, &targets, -m, m, cfg.cap)?;
        rep.idla_moves = moves;
        self.check_mass(&mut rep, -m, m, mass0, "second step");
        rep.source_left = self.line.eta(inner_lo) as u64;
        rep.source_right = self.line.eta(inner_hi) as u64;
        let need = 0.2 * mt as f64;
        rep.event2 = rep.source_left as f64 >= need && rep.source_right as f64 >= need;
        let after_two = self.line.clone();

        // step 3
        let layout = cfg.layout(i)?;
        let mut lat = LatticeState::new(-m, m)?;
        for x in -m + 1..m {
            lat.set_eta(x, self.line.eta(x));
            lat.set_omega(x, self.line.omega(x));
        }
        // particles already frozen at the ends stay out of the carpet's books
        let parked = [self.line.eta(-m) as u64, self.line.eta(m) as u64];
        rep.valid_at_step3 = validate_config(&lat, &layout);
        if rep.event1 && rep.event2 && !rep.valid_at_step3 {
            rep.violate("configuration not valid after the first two steps".into());
        }
        if rep.valid_at_step3 && cfg.run_carpet {
            let mut st = CarpetState::new(layout, lat)?;
            st.cap = cfg.cap;
            st.check_level = cfg.check_level;
            st.run_to_partial_stabilization(&mut self.carpet)?;
            if let Err(e) = st.check_end() {
                rep.violate(e.to_string());
            }
            rep.carpet_ran = true;
            rep.half_topplings = st.tallies.half_topplings;
            let out = st.lattice();
            for x in -m + 1..m {
                let v = out.eta(x);
                self.line.set_eta(x, v);
                let idx = self.line.idx(x);
                self.line.omega[idx] = out.omega(x);
            }
            self.line.set_eta(-m, (parked[0] + out.boundary[0]) as u32);
            self.line.set_eta(m, (parked[1] + out.boundary[1]) as u32);
            rep.frozen_blocks = st.frozen().iter().filter(|&&f| f).count() as u64;
            let odos: Vec<u64> = (0..layout.n).map(|b| st.odometer_at(layout.block_start(b))).collect();
            rep.odometer_min = odos.iter().copied().min().unwrap_or(0);
            rep.odometer_origin = st.odometer_at(-a / 2);
            self.check_mass(&mut rep, -m, m, mass0, "third step");
        }
        rep.boundary_left = self.line.eta(-m) as u64;
        rep.boundary_right = self.line.eta(m) as u64;
        let blocks = (2 * mt + 1) as f64;
        rep.event3 = rep.carpet_ran
            && (rep.frozen_blocks as f64) < cfg.delta * blocks
            && rep.boundary_left as f64 >= mt as f64 / 4.0
            && rep.boundary_right as f64 >= mt as f64 / 4.0
            && rep.odometer_min as f64 >= cfg.beta * blocks;
        rep.d_stage = center_of_mass(&before, -m, m, None) - center_of_mass(&self.line, -m, m, None);
        rep.d_third = center_of_mass(&after_two, -m, m, None) - center_of_mass(&self.line, -m, m, None);
        Ok(rep)
    }

    fn check_mass(&self, rep: &mut StageReport, lo: i64, hi: i64, want: u64, step: &str) {
        let got = self.line.mass(lo, hi);
        if got != want {
            rep.violate(format!("mass {got} after the {step}, expected {want}"));
        }
    }
}

/// Stages `0, 1, ...` until one fails or `max_stages` have run.
pub fn run_bootstrap(cfg: &StageConfig, max_stages: usize) -> Result<BootstrapReport> {
    let mut b = Bootstrap::new(cfg.clone(), max_stages)?;
    let mut out = BootstrapReport::default();
    for i in 0..max_stages {
        let rep = b.run_stage(i)?;
        let ok = rep.success() && rep.violations == 0;
        let failure = rep.failure();
        out.stages.push(rep);
        if !ok {
            out.first_failure = Some(failure.unwrap_or("invariant").to_string());
            break;
        }
        out.survival += 1;
    }
    Ok(out)
}
