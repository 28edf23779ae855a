//! The experiment subcommands. Each one reads its keys from the merged
//! config, runs its replicas and returns a `Report`.

use std::sync::Arc;

use anyhow::anyhow;
use rand::Rng;

use sandpile_core::block::chain::{run_block_chain, run_block_chain_with, BlockStats, ChainConfig, ChainInit};
use sandpile_core::block::emissions::{
    summarize as summarize_emissions, DirectEmissions, EmissionBackend, EmissionSummary,
};
use sandpile_core::block::path::{LiteralWalker, RespawnPolicy};
use sandpile_core::block::spectral::{FrozenEscape, MAX_A};
use sandpile_core::bootstrap::{run_bootstrap, StageConfig};
use sandpile_core::carpet::{
    carpet_stacks, check_h_events, coarse_counters, run_partial_stabilization, validate_config, CarpetRun, CarpetState,
    CheckLevel,
};
use sandpile_core::lattice::{
    activity_proxy, stabilize_full, stabilize_half, InitialLaw, LatticeState, Odometer, Policy, DEFAULT_TOPPLING_CAP,
};
use sandpile_core::rng::{derive, BitStream};
use sandpile_core::{BlockLayout, SandpileError, StackLayout, StackSet};

use crate::config::{Config, ConfigError};
use crate::parallel::map_indexed;
use crate::report::{Report, Row};

/// Failure of a command: bad configuration (exit 2) or a run error (exit 1).
#[derive(Debug)]
pub enum LabError {
    Config(ConfigError),
    Run(anyhow::Error),
}

impl std::fmt::Display for LabError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabError::Config(e) => write!(f, "configuration error: {e}"),
            LabError::Run(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for LabError {
    fn from(e: ConfigError) -> Self {
        LabError::Config(e)
    }
}

impl From<anyhow::Error> for LabError {
    fn from(e: anyhow::Error) -> Self {
        LabError::Run(e)
    }
}

impl From<SandpileError> for LabError {
    fn from(e: SandpileError) -> Self {
        LabError::Run(e.into())
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;

pub const GLOBAL_KEYS: &[&str] = &["seed", "replicas", "threads"];

/// Seed, replica count and thread count shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct Common {
    pub seed: u64,
    pub replicas: usize,
    pub threads: usize,
}

impl Common {
    pub fn from_config(cfg: &Config, threads: usize) -> LabResult<Self> {
        let replicas: usize = cfg.get("replicas", 8)?;
        if replicas == 0 {
            return Err(cfg.error("replicas", "need at least one replica").into());
        }
        Ok(Self { seed: cfg.get("seed", 1)?, replicas, threads })
    }

    pub fn replica_seed(&self, r: usize) -> u64 {
        derive(self.seed, r as u64)
    }
}

fn allowed<'a>(own: &[&'a str]) -> Vec<&'a str> {
    own.iter().copied().chain(GLOBAL_KEYS.iter().copied()).collect()
}

// ---------------------------------------------------------------- stabilize

pub const POLICY_NAMES: &[&str] = &["leftmost", "rightmost", "queue", "random", "random2"];

pub fn policy_set(seed: u64) -> [Policy; 5] {
    [
        Policy::Leftmost,
        Policy::Rightmost,
        Policy::Queue,
        Policy::Random(derive(seed, 1)),
        Policy::Random(derive(seed, 2)),
    ]
}

/// Random instance: interior length in `1..=max_len`, up to `max_particles`
/// particles dropped uniformly.
pub fn random_instance(seed: u64, max_len: i64, max_particles: u32) -> LatticeState {
    let mut r = BitStream::new(seed, 0x1257);
    let len = r.random_range(1..=max_len);
    let particles = r.random_range(0..=max_particles);
    let mut s = LatticeState::new(-1, len).expect("nonempty interior");
    for _ in 0..particles {
        let x = r.random_range(0..len);
        s.add_particles(x, 1);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizeRecord {
    pub length: i64,
    pub particles: u64,
    pub full_total: u64,
    pub half_total: u64,
    pub abelian_full: bool,
    pub abelian_half: bool,
    pub half_bound: bool,
    pub mass: bool,
    pub parity: bool,
    pub stable: bool,
}

fn stacks_for(s: &LatticeState, seed: u64) -> StackSet {
    StackSet::new(s.lo() + 1, s.hi(), StackLayout::Uniform, seed).expect("interior stacks")
}

/// Abelian, half-bound, mass and parity checks on one instance.
pub fn stabilize_instance(init: &LatticeState, seed: u64) -> anyhow::Result<StabilizeRecord> {
    let stack_seed = derive(seed, 0x57AC);
    let mass0 = init.total_mass();
    let mut finals: Vec<(LatticeState, Odometer)> = Vec::new();
    let mut halves: Vec<(LatticeState, Odometer)> = Vec::new();
    for p in policy_set(seed) {
        let mut s = init.clone();
        let mut st = stacks_for(&s, stack_seed);
        let odo = stabilize_full(&mut s, &mut st, p, DEFAULT_TOPPLING_CAP)?;
        // consumption doubles as the odometer
        if s.sites().any(|x| st.consumed_at(x) != 2 * odo.at(x)) {
            return Err(anyhow!("stack consumption differs from twice the odometer"));
        }
        finals.push((s, odo));
        let mut h = init.clone();
        let mut st = stacks_for(&h, stack_seed);
        let odo = stabilize_half(&mut h, &mut st, p, DEFAULT_TOPPLING_CAP)?;
        halves.push((h, odo));
    }
    let (f0, m0) = &finals[0];
    let (h0, hm0) = &halves[0];
    let abelian_full = finals.iter().all(|(s, m)| s == f0 && m == m0);
    let abelian_half = halves.iter().all(|(s, m)| s == h0 && m == hm0);
    let half_bound = init.sites().all(|x| hm0.at(x) <= 2 * m0.at(x));
    let mass = finals.iter().chain(halves.iter()).all(|(s, _)| s.total_mass() == mass0);
    let parity =
        halves.iter().all(|(s, m)| s.sites().all(|x| s.omega(x) as u64 == (init.omega(x) as u64 + m.at(x)) % 2));
    let stable = f0.is_full_stable() && h0.is_half_stable();
    Ok(StabilizeRecord {
        length: init.hi() - init.lo() - 1,
        particles: mass0,
        full_total: m0.total(),
        half_total: hm0.total(),
        abelian_full,
        abelian_half,
        half_bound,
        mass,
        parity,
        stable,
    })
}

pub fn cmd_stabilize(cfg: &Config, threads: usize) -> LabResult<Report> {
    cfg.check_keys(&allowed(&["max_length", "max_particles"]))?;
    let c = Common::from_config(cfg, threads)?;
    let max_len: i64 = cfg.get("max_length", 64)?;
    let max_p: u32 = cfg.get("max_particles", 20)?;
    if max_len < 1 {
        return Err(cfg.error("max_length", "must be at least 1").into());
    }
    let recs = map_indexed(c.replicas, c.threads, |r| {
        let seed = c.replica_seed(r);
        stabilize_instance(&random_instance(seed, max_len, max_p), seed)
    });
    let mut rep = Report::new("stabilize", 1, cfg.echo());
    for (r, rec) in recs.into_iter().enumerate() {
        let rec = rec?;
        let ok = rec.abelian_full && rec.abelian_half && rec.half_bound && rec.mass && rec.parity && rec.stable;
        if !ok {
            rep.violations += 1;
        }
        rep.rows.push(
            Row::new()
                .with("replica", r)
                .with("seed", c.replica_seed(r))
                .with("length", rec.length)
                .with("particles", rec.particles)
                .with("full_topplings", rec.full_total)
                .with("half_topplings", rec.half_total)
                .with("abelian_full", rec.abelian_full)
                .with("abelian_half", rec.abelian_half)
                .with("half_bound", rec.half_bound)
                .with("mass", rec.mass)
                .with("parity", rec.parity),
        );
    }
    rep.aggregate("full_topplings");
    rep.aggregate("half_topplings");
    Ok(rep)
}

// ----------------------------------------------------------------- activity

/// `poisson:M`, `det:K` or `finite:p0,p1,...`.
pub fn parse_law(s: &str) -> std::result::Result<InitialLaw, String> {
    let (kind, arg) = s.split_once(':').ok_or_else(|| format!("law {s:?} needs the form kind:value"))?;
    let law = match kind.trim() {
        "poisson" => InitialLaw::Poisson(arg.trim().parse().map_err(|_| format!("bad Poisson mean {arg:?}"))?),
        "det" => InitialLaw::Deterministic(arg.trim().parse().map_err(|_| format!("bad count {arg:?}"))?),
        "finite" => InitialLaw::Finite(
            arg.split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad probability {p:?}")))
                .collect::<std::result::Result<_, _>>()?,
        ),
        other => return Err(format!("unknown law kind {other:?} (poisson, det or finite)")),
    };
    law.validate().map_err(|e| e.to_string())?;
    Ok(law)
}

fn law_key(cfg: &Config, key: &str, default: &str) -> LabResult<InitialLaw> {
    parse_law(cfg.raw(key).unwrap_or(default)).map_err(|e| cfg.error(key, e).into())
}

pub fn cmd_activity(cfg: &Config, threads: usize) -> LabResult<Report> {
    cfg.check_keys(&allowed(&["law", "windows"]))?;
    let c = Common::from_config(cfg, threads)?;
    let law = law_key(cfg, "law", "poisson:1.0")?;
    let windows: Vec<i64> = cfg.get_list("windows", &[8, 16, 32, 64])?;
    if windows.is_empty() || windows.windows(2).any(|w| w[0] >= w[1]) || windows[0] < 0 {
        return Err(cfg.error("windows", "need nonnegative increasing window sizes").into());
    }
    let runs =
        map_indexed(c.replicas, c.threads, |r| activity_proxy(&law, &windows, c.replica_seed(r), DEFAULT_TOPPLING_CAP));
    let mut rep = Report::new("activity", 1, cfg.echo());
    for (r, run) in runs.into_iter().enumerate() {
        let odo = run?;
        let monotone = odo.windows(2).all(|w| w[0] <= w[1]);
        if !monotone {
            rep.violations += 1;
        }
        let mut row = Row::new().with("replica", r).with("seed", c.replica_seed(r));
        for (l, m) in windows.iter().zip(&odo) {
            row.push(&format!("m_{l}"), *m);
        }
        row.push("monotone", monotone);
        rep.rows.push(row);
    }
    for l in &windows {
        rep.aggregate(&format!("m_{l}"));
    }
    Ok(rep)
}

// ------------------------------------------------------------------- carpet

pub fn check_level(s: &str) -> std::result::Result<CheckLevel, String> {
    match s {
        "off" => Ok(CheckLevel::Off),
        "local" => Ok(CheckLevel::Local),
        "full" => Ok(CheckLevel::Full),
        _ => Err(format!("unknown check level {s:?} (off, local or full)")),
    }
}

/// Random valid configuration: full carpet, each block empty at a random
/// site with probability `empty_prob`, random block parities and up to
/// `extras` free particles at each block endpoint.
pub fn random_carpet(layout: &BlockLayout, seed: u64, extras: u32, empty_prob: f64) -> LatticeState {
    let mut r = BitStream::new(seed, 0xCA4F);
    let mut lat = LatticeState::new(layout.left_end(), layout.right_end()).expect("domain");
    for x in lat.sites() {
        lat.set_eta(x, 1);
    }
    for i in 0..layout.n {
        let s = layout.block_start(i);
        for x in s..=layout.block_end(i) {
            lat.set_omega(x, r.random_range(0..2));
        }
        if r.random_bool(empty_prob) {
            lat.set_eta(s + r.random_range(0..=layout.a), 0);
        }
        for x in [s, layout.block_end(i)] {
            let add = r.random_range(0..=extras);
            lat.set_eta(x, lat.eta(x) + add);
        }
    }
    debug_assert!(validate_config(&lat, layout));
    lat
}

#[derive(Debug, Clone)]
pub struct CarpetRecord {
    pub run: CarpetRun,
    pub conserved: bool,
    pub frozen_ok: bool,
}

pub fn carpet_instance(
    layout: BlockLayout,
    seed: u64,
    extras: u32,
    empty_prob: f64,
    level: CheckLevel,
) -> anyhow::Result<CarpetRecord> {
    let lat = random_carpet(&layout, seed, extras, empty_prob);
    let mut st = CarpetState::new(layout, lat)?;
    st.check_level = level;
    let mut stacks = carpet_stacks(&layout, derive(seed, 0x57AC))?;
    let run = run_partial_stabilization(&mut st, &mut stacks)?;
    st.check_end()?;
    let frozen: u64 = run.frozen.iter().map(|&f| f as u64).sum();
    let conserved = run.free_start == frozen + run.boundary[0] + run.boundary[1];
    // a frozen block holds exactly its hole particle at iK+a
    let frozen_ok =
        (0..layout.n).all(|i| run.frozen[i] <= 1 && (run.frozen[i] == 0 || st.holes()[i] == layout.block_end(i)));
    Ok(CarpetRecord { run, conserved, frozen_ok })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayRecord {
    pub frozen_match: bool,
    pub left_match: bool,
    pub prefix_match: bool,
}

/// Coupled replay of the coarse counters against a full run.
pub fn replay_instance(layout: BlockLayout, seed: u64, extras: u32, empty_prob: f64) -> anyhow::Result<ReplayRecord> {
    let lat = random_carpet(&layout, seed, extras, empty_prob);
    let stack_seed = derive(seed, 0x57AC);
    let mut st = CarpetState::new(layout, lat.clone())?;
    let mut stacks = carpet_stacks(&layout, stack_seed)?;
    let run = run_partial_stabilization(&mut st, &mut stacks)?;
    let n = layout.n;
    let mut rec = ReplayRecord { frozen_match: true, left_match: true, prefix_match: true };
    for i in 0..n {
        let s = if i + 1 < n { run.left_moves[i + 1] } else { 0 };
        let (lm, f) = coarse_counters(&layout, &lat, i, s, stack_seed)?;
        rec.frozen_match &= f[i] == run.frozen[i];
        rec.left_match &= lm[i] == run.left_moves[i];
        rec.prefix_match &= (0..=i).all(|j| lm[j] == run.left_moves[j] && f[j] == run.frozen[j]);
    }
    Ok(rec)
}

fn block_metrics(cfg: &Config, default_a: i64) -> LabResult<(i64, i64, bool)> {
    let a: i64 = cfg.get("a", default_a)?;
    if a < 1 {
        return Err(cfg.error("a", "block width must be positive").into());
    }
    let paper_k = a.checked_pow(4).ok_or_else(|| cfg.error("a", "a^4 overflows"))?;
    let k: i64 = cfg.get("k", paper_k)?;
    if k <= a + 1 {
        return Err(cfg.error("k", format!("period {k} must exceed a + 1 = {}", a + 1)).into());
    }
    Ok((a, k, k != paper_k))
}

pub fn cmd_carpet(cfg: &Config, threads: usize) -> LabResult<Report> {
    cfg.check_keys(&allowed(&["a", "k", "n", "extras", "empty_prob", "check", "beta", "replay"]))?;
    let c = Common::from_config(cfg, threads)?;
    let (a, k, k_override) = block_metrics(cfg, 4)?;
    let n: usize = cfg.get("n", 4)?;
    let extras: u32 = cfg.get("extras", 1)?;
    let empty_prob: f64 = cfg.get("empty_prob", 0.5)?;
    if !(0.0..=1.0).contains(&empty_prob) {
        return Err(cfg.error("empty_prob", "must lie in [0, 1]").into());
    }
    let level = check_level(cfg.raw("check").unwrap_or("local")).map_err(|e| cfg.error("check", e))?;
    let beta: f64 = cfg.get("beta", 4e-4)?;
    let replay: bool = cfg.get("replay", false)?;
    let layout = BlockLayout::with_period(a, k, n).map_err(|e| cfg.error("n", e))?;
    let out = map_indexed(c.replicas, c.threads, |r| {
        let seed = c.replica_seed(r);
        let rec = carpet_instance(layout, seed, extras, empty_prob, level);
        let rep = if replay { Some(replay_instance(layout, seed, extras, empty_prob)) } else { None };
        (rec, rep)
    });
    let mut rep = Report::new("carpet", 1, cfg.echo());
    for (r, (rec, replayed)) in out.into_iter().enumerate() {
        let mut row = Row::new()
            .with("replica", r)
            .with("seed", c.replica_seed(r))
            .with("a", a)
            .with("k", k)
            .with("k_override", k_override)
            .with("n", n);
        match rec {
            Ok(rec) => {
                let t = &rec.run.tallies;
                let frozen: u64 = rec.run.frozen.iter().map(|&f| f as u64).sum();
                let h = check_h_events(&rec.run.odometer_at_starts, beta, n);
                let attempts = t.froze + t.emit_left + t.emit_right;
                if !rec.conserved || !rec.frozen_ok {
                    rep.violations += 1;
                }
                row = row
                    .with("free_start", rec.run.free_start)
                    .with("frozen", frozen)
                    .with("boundary_left", rec.run.boundary[0])
                    .with("boundary_right", rec.run.boundary[1])
                    .with("excursions", t.excursions)
                    .with("froze", t.froze)
                    .with("emit_left", t.emit_left)
                    .with("emit_right", t.emit_right)
                    .with("unfreezes", t.unfreezes)
                    .with("failed_rearrivals", t.failed_rearrivals)
                    .with("half_topplings", t.half_topplings)
                    .with("h_blocks", h.iter().filter(|&&b| b).count())
                    .with("freeze_rate", if attempts == 0 { 0.0 } else { t.froze as f64 / attempts as f64 })
                    .with("conserved", rec.conserved)
                    .with("error", "");
            }
            Err(e) => {
                rep.violations += 1;
                row = row.with("error", format!("{e:#}"));
            }
        }
        if let Some(rp) = replayed {
            let ok = match &rp {
                Ok(x) => x.frozen_match && x.left_match && x.prefix_match,
                Err(_) => false,
            };
            if !ok {
                rep.violations += 1;
            }
            row.push("replay", ok);
        }
        rep.rows.push(row);
    }
    for col in ["frozen", "boundary_left", "boundary_right", "half_topplings", "freeze_rate"] {
        rep.aggregate(col);
    }
    Ok(rep)
}

// -------------------------------------------------------------------- block

fn chain_init(s: &str) -> std::result::Result<ChainInit, String> {
    match s {
        "base" => Ok(ChainInit::Base),
        "exit" => Ok(ChainInit::Exit),
        _ => {
            if let Some(e) = s.strip_prefix("eps:") {
                e.parse().map(ChainInit::EpsilonBase).map_err(|_| format!("bad epsilon {e:?}"))
            } else if let Some(b) = s.strip_prefix("explicit:") {
                u64::from_str_radix(b, 2).map(ChainInit::Explicit).map_err(|_| format!("bad bit string {b:?}"))
            } else {
                Err(format!("unknown init {s:?} (base, eps:E, explicit:BITS or exit)"))
            }
        }
    }
}

/// Emission statistics from `attempts` attempted emissions of the direct backend.
pub fn emission_run(
    a: i64,
    k: i64,
    attempts: u64,
    seed: u64,
    law: Option<Arc<FrozenEscape>>,
) -> anyhow::Result<EmissionSummary> {
    let mut r = BitStream::new(seed, 0x0E11);
    let omega = (r.random::<u64>() & ((1u64 << (a + 1)) - 1)) | 0b10;
    let mut b = DirectEmissions::new(a, k, omega, seed)?;
    if let Some(l) = law {
        b = b.with_escape_law(l);
    }
    Ok(summarize_emissions(&b.run(attempts)?))
}

pub fn cmd_block(cfg: &Config, threads: usize) -> LabResult<Report> {
    cfg.check_keys(&allowed(&["a", "k", "horizon", "init", "policy", "backend", "aux_check", "attempts"]))?;
    let c = Common::from_config(cfg, threads)?;
    let (a, k, k_override) = block_metrics(cfg, 8)?;
    if !(2..=62).contains(&a) {
        return Err(cfg.error("a", "block width must lie in 2..=62").into());
    }
    let horizon: u64 = cfg.get("horizon", 10_000)?;
    if horizon == 0 {
        return Err(cfg.error("horizon", "must be at least 1").into());
    }
    let init = chain_init(cfg.raw("init").unwrap_or("base")).map_err(|e| cfg.error("init", e))?;
    let policy: RespawnPolicy = cfg.get("policy", RespawnPolicy::Uniform)?;
    let backend = cfg.raw("backend").unwrap_or("direct").to_string();
    if backend != "direct" && backend != "literal" {
        return Err(cfg.error("backend", "must be direct or literal").into());
    }
    let aux_check: bool = cfg.get("aux_check", true)?;
    let attempts: u64 = cfg.get("attempts", 2_000)?;
    let law = if attempts > 0 && a <= MAX_A { Some(Arc::new(FrozenEscape::new(a, k)?)) } else { None };
    let out = map_indexed(c.replicas, c.threads, |r| -> anyhow::Result<(BlockStats, Option<EmissionSummary>)> {
        let seed = c.replica_seed(r);
        let mut cc = ChainConfig::new(a, k, horizon, seed);
        cc.init = init;
        cc.policy = policy;
        cc.check = aux_check;
        let stats = if backend == "literal" {
            let mut w = LiteralWalker::new(a, k, seed)?;
            run_block_chain_with(&cc, &mut w)?
        } else {
            run_block_chain(&cc)?
        };
        let em = if attempts > 0 { Some(emission_run(a, k, attempts, derive(seed, 0xE1), law.clone())?) } else { None };
        Ok((stats, em))
    });
    let mut rep = Report::new("block", 1, cfg.echo());
    for (r, res) in out.into_iter().enumerate() {
        let (s, em) = res?;
        rep.violations += s.violations;
        let frac = |x: u64| if s.aux_steps == 0 { 0.0 } else { x as f64 / s.aux_steps as f64 };
        let mut row = Row::new()
            .with("replica", r)
            .with("seed", c.replica_seed(r))
            .with("a", a)
            .with("k", k)
            .with("k_override", k_override)
            .with("backend", backend.as_str())
            .with("steps", s.steps)
            .with("segments", s.segments)
            .with("exits", s.exits)
            .with("base_hits", s.base_hits)
            .with("base_before_exit", s.base_before_exit)
            .with("exit_before_base", s.exit_before_base)
            .with("excursions", s.kinds[0])
            .with("long_excursions", s.kinds[1])
            .with("double_sided", s.kinds[2])
            .with("failed_rearrivals", s.failed_rearrivals)
            .with("aux_steps", s.aux_steps)
            .with("aux_violations", s.violations);
        for kk in 1..=10 {
            row.push(&format!("loss_ge_{kk}"), frac(s.loss_at_least(kk)));
        }
        if let Some(e) = em {
            let f = |x: u64, n: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
            row = row
                .with("attempts", e.attempts)
                .with("emissions", e.emissions)
                .with("right_freq", f(e.right, e.emissions))
                .with("freeze_freq", f(e.froze, e.attempts))
                .with("left_advance_freq", f(e.left_advances, e.windows));
        }
        rep.rows.push(row);
    }
    for col in ["exits", "exit_before_base", "failed_rearrivals", "loss_ge_1", "loss_ge_5", "right_freq", "freeze_freq"]
    {
        if rep.rows.first().is_some_and(|r| r.get(col).is_some()) {
            rep.aggregate(col);
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------- bootstrap

pub fn stage_config(cfg: &Config, seed: u64) -> LabResult<(StageConfig, usize, bool)> {
    let a: i64 = cfg.get("a", 8)?;
    let k: i64 = cfg.get("k", a * a)?;
    let m0: u64 = cfg.get("m_tilde0", 8)?;
    let law = law_key(cfg, "mu", "finite:0,0,1")?;
    let mu = match law {
        InitialLaw::Finite(p) => p,
        InitialLaw::Deterministic(j) => {
            let mut p = vec![0.0; j as usize + 1];
            p[j as usize] = 1.0;
            p
        }
        InitialLaw::Poisson(_) => return Err(cfg.error("mu", "the bootstrap needs a finitely supported law").into()),
    };
    let mut sc = StageConfig::new(a, k, m0, mu, seed);
    sc.gamma = cfg.get("gamma", sc.gamma)?;
    sc.delta = cfg.get("delta", sc.delta)?;
    sc.beta = cfg.get("beta", sc.beta)?;
    sc.epsilon = cfg.get("epsilon", sc.epsilon)?;
    sc.growth_min = cfg.get("growth_min", 0)?;
    sc.run_carpet = cfg.get("carpet", true)?;
    sc.check_level = check_level(cfg.raw("check").unwrap_or("off")).map_err(|e| cfg.error("check", e))?;
    if let Err(e) = sc.validate() {
        let key = match &e {
            SandpileError::Config(m) if m.contains("even") => "a",
            SandpileError::Config(m) if m.contains("mu") || m.contains("pmf") => "mu",
            SandpileError::Config(m) if m.contains("M0") => "m_tilde0",
            _ => "k",
        };
        return Err(cfg.error(key, e).into());
    }
    let stages: usize = cfg.get("stages", 2)?;
    if stages == 0 {
        return Err(cfg.error("stages", "need at least one stage").into());
    }
    Ok((sc, stages, k != a * a * a * a))
}

pub fn cmd_bootstrap(cfg: &Config, threads: usize) -> LabResult<Report> {
    cfg.check_keys(&allowed(&[
        "a",
        "k",
        "m_tilde0",
        "mu",
        "gamma",
        "delta",
        "beta",
        "epsilon",
        "growth_min",
        "carpet",
        "check",
        "stages",
    ]))?;
    let c = Common::from_config(cfg, threads)?;
    let (_, stages, k_override) = stage_config(cfg, c.seed)?;
    let out = map_indexed(c.replicas, c.threads, |r| -> LabResult<_> {
        let (sc, _, _) = stage_config(cfg, c.replica_seed(r))?;
        Ok(run_bootstrap(&sc, stages)?)
    });
    let mut rep = Report::new("bootstrap", 1, cfg.echo());
    for (r, res) in out.into_iter().enumerate() {
        let b = res?;
        for s in &b.stages {
            rep.violations += s.violations;
            let opt = |x: Option<bool>| x.map_or("na".to_string(), |b| b.to_string());
            rep.rows.push(
                Row::new()
                    .with("replica", r)
                    .with("seed", c.replica_seed(r))
                    .with("k_override", k_override)
                    .with("survival", b.survival)
                    .with("first_failure", b.first_failure.clone().unwrap_or_default())
                    .with("stage", s.stage)
                    .with("m_tilde", s.m_tilde)
                    .with("m", s.m)
                    .with("event1", s.event1)
                    .with("event2", s.event2)
                    .with("event3", s.event3)
                    .with("event4_plus", opt(s.event4_plus))
                    .with("event4_minus", opt(s.event4_minus))
                    .with("valid_at_step3", s.valid_at_step3)
                    .with("carpet_ran", s.carpet_ran)
                    .with("frozen_blocks", s.frozen_blocks)
                    .with("boundary_left", s.boundary_left)
                    .with("boundary_right", s.boundary_right)
                    .with("odometer_min", s.odometer_min)
                    .with("odometer_origin", s.odometer_origin)
                    .with("d_stage", s.d_stage)
                    .with("d_third", s.d_third)
                    .with("m_pow_1_6", (s.m as f64).powf(1.6))
                    .with("idla_moves", s.idla_moves)
                    .with("half_topplings", s.half_topplings)
                    .with("violations", s.violations),
            );
        }
    }
    for col in ["survival", "frozen_blocks", "boundary_left", "boundary_right", "d_stage"] {
        rep.aggregate(col);
    }
    Ok(rep)
}
