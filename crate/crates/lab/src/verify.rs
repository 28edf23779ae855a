//! Property suite: exact checks and binomial-tolerance Monte Carlo checks.
//! Every sampled quantity is split into fixed-size chunks with derived
//! seeds, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{anyhow, Result};
use rand::Rng;

use sandpile_core::block::chain::{run_block_chain, BlockStats, ChainConfig, LOSS_BINS};
use sandpile_core::block::emissions::EmissionSummary;
use sandpile_core::block::oracles::{
    bounce_samples, conditional_parity_bins, even_visit_counts, forced_parity, path_summary, reach_counts, EvenVisit,
    PathSummary,
};
use sandpile_core::block::path::{sample_path, DirectWalker, LiteralWalker, PathKind, RespawnPolicy};
use sandpile_core::block::spectral::FrozenEscape;
use sandpile_core::bootstrap::{run_bootstrap, StageConfig};
use sandpile_core::carpet::CheckLevel;
use sandpile_core::exact::{self, to_f64};
use sandpile_core::lattice::{activity_proxy, stabilize_full, InitialLaw, LatticeState, Policy, DEFAULT_TOPPLING_CAP};
use sandpile_core::rng::{derive, BitStream, Orientation};
use sandpile_core::stats::{binomial_sigma, total_variation, Accumulator};
use sandpile_core::{BlockLayout, StackLayout, StackSet};

use crate::commands::{carpet_instance, emission_run, random_instance, replay_instance, stabilize_instance};
use crate::oracle;
use crate::parallel::map_indexed;
use crate::report::{Report, Row};

pub const DEFAULT_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
pub struct Opts {
    pub seed: u64,
    pub z: f64,
    pub threads: usize,
    /// Overrides the check's main sample size.
    pub size: Option<u64>,
}

impl Opts {
    pub fn new(seed: u64) -> Self {
        Self { seed, z: DEFAULT_Z, threads: 1, size: None }
    }

    fn n(&self, default: u64) -> u64 {
        self.size.unwrap_or(default)
    }

    fn sub(&self, salt: u64) -> u64 {
        derive(self.seed, salt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub label: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub n: u64,
    pub pass: bool,
}

impl Measure {
    fn exact(label: &str, value: u64, target: u64) -> Self {
        Self {
            label: label.into(),
            value: value as f64,
            target: target as f64,
            tolerance: 0.0,
            n: target,
            pass: value == target,
        }
    }

    fn flag(label: &str, ok: bool, n: u64) -> Self {
        Self { label: label.into(), value: ok as u8 as f64, target: 1.0, tolerance: 0.0, n, pass: ok }
    }

    /// `|p - target| <= z sigma(target)`.
    fn within(label: &str, hits: u64, n: u64, target: f64, z: f64) -> Self {
        let p = hits as f64 / n.max(1) as f64;
        let tol = z * binomial_sigma(target, n);
        Self { label: label.into(), value: p, target, tolerance: tol, n, pass: n > 0 && (p - target).abs() <= tol }
    }

    /// `p <= ceiling + z sigma(ceiling)`.
    fn below(label: &str, hits: u64, n: u64, ceiling: f64, z: f64) -> Self {
        let p = hits as f64 / n.max(1) as f64;
        let tol = z * binomial_sigma(ceiling, n);
        Self { label: label.into(), value: p, target: ceiling, tolerance: tol, n, pass: n > 0 && p <= ceiling + tol }
    }

    /// `p >= floor - z sigma(floor)`.
    fn above(label: &str, hits: u64, n: u64, floor: f64, z: f64) -> Self {
        let p = hits as f64 / n.max(1) as f64;
        let tol = z * binomial_sigma(floor, n);
        Self { label: label.into(), value: p, target: floor, tolerance: tol, n, pass: n > 0 && p >= floor - tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub criterion: Option<u8>,
    pub measures: Vec<Measure>,
    pub detail: String,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        !self.measures.is_empty() && self.measures.iter().all(|m| m.pass)
    }

    /// Compact `label=value` list.
    pub fn summary(&self) -> String {
        let parts: Vec<String> = self
            .measures
            .iter()
            .map(|m| {
                let mark = if m.pass { "" } else { " FAIL" };
                if m.tolerance > 0.0 {
                    format!(
                        "{}={:.6} (target {:.6} tol {:.6}, n={}){mark}",
                        m.label, m.value, m.target, m.tolerance, m.n
                    )
                } else {
                    format!("{}={} (target {}){mark}", m.label, m.value, m.target)
                }
            })
            .collect();
        let mut s = parts.join("; ");
        if !self.detail.is_empty() {
            s.push_str(" | ");
            s.push_str(&self.detail);
        }
        s
    }
}

type CheckFn = fn(&Opts) -> Result<CheckResult>;

/// Every check: name, acceptance criterion (if any), function.
pub const SUITE: &[(&str, Option<u8>, CheckFn)] = &[
    ("abelian", Some(1), check_abelian),
    ("half-bound", Some(2), check_half_bound),
    ("micro-oracle", Some(3), check_micro_oracle),
    ("reach", Some(4), check_reach),
    ("even-visit", Some(5), check_even_visit),
    ("bounce", Some(6), check_bounce),
    ("right-emission", Some(7), check_right_emission),
    ("carpet-structure", Some(8), check_carpet_structure),
    ("coarse-replay", Some(9), check_coarse_replay),
    ("aux", Some(10), check_aux),
    ("refresh-loss", Some(11), check_refresh_loss),
    ("activity", Some(12), check_activity),
    ("bootstrap", Some(13), check_bootstrap),
    ("reproducibility", Some(14), check_reproducibility),
    ("streams", None, check_streams),
    ("forced-parity", None, check_forced_parity),
    ("conditional-parity", None, check_conditional_parity),
    ("backend-cross", None, check_backend_cross),
    ("failed-rearrival", None, check_failed_rearrival),
    ("left-advance", None, check_left_advance),
    ("frozen-followup", None, check_frozen_followup),
    ("frozen-rate", None, check_frozen_rate),
];

pub fn find(name: &str) -> Option<(&'static str, Option<u8>, CheckFn)> {
    SUITE.iter().copied().find(|(n, _, _)| *n == name)
}

pub fn names() -> Vec<&'static str> {
    SUITE.iter().map(|(n, _, _)| *n).collect()
}

/// Run the named checks and tabulate one row per measure.
pub fn run_suite(names: &[&str], o: &Opts, config: Vec<(String, String)>) -> Result<(Report, Vec<CheckResult>)> {
    let mut rep = Report::new("verify", 1, config);
    let mut results = Vec::new();
    for &name in names {
        let (_, _, f) = find(name).ok_or_else(|| anyhow!("unknown check {name:?}"))?;
        let res = f(o)?;
        for m in &res.measures {
            rep.rows.push(
                Row::new()
                    .with("check", res.name)
                    .with("criterion", res.criterion.map_or(String::new(), |c| c.to_string()))
                    .with("measure", m.label.as_str())
                    .with("value", m.value)
                    .with("target", m.target)
                    .with("tolerance", m.tolerance)
                    .with("n", m.n)
                    .with("pass", m.pass),
            );
        }
        if !res.pass() {
            rep.failures.push(res.name.to_string());
        }
        results.push(res);
    }
    Ok((rep, results))
}

/// `(chunk index, size)` pieces of `total` with at most `chunk` each.
fn chunks(total: u64, chunk: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut left = total;
    let mut i = 0;
    while left > 0 {
        let c = left.min(chunk);
        out.push((i, c));
        left -= c;
        i += 1;
    }
    out
}

fn par_chunks<T: Send>(
    o: &Opts,
    total: u64,
    chunk: u64,
    f: impl Fn(u64, u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let cs = chunks(total, chunk);
    map_indexed(cs.len(), o.threads, |i| f(cs[i].0, cs[i].1)).into_iter().collect()
}

fn result(name: &'static str, criterion: Option<u8>, measures: Vec<Measure>, detail: String) -> CheckResult {
    CheckResult { name, criterion, measures, detail }
}

// ------------------------------------------------------------ lattice checks

pub fn check_abelian(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1000);
    let base = o.sub(0xAB);
    let recs = map_indexed(n as usize, o.threads, |i| {
        let s = derive(base, i as u64);
        stabilize_instance(&random_instance(s, 64, 20), s)
    });
    let recs: Vec<_> = recs.into_iter().collect::<Result<_>>()?;
    let full = recs.iter().filter(|r| r.abelian_full).count() as u64;
    let half = recs.iter().filter(|r| r.abelian_half).count() as u64;
    let cons = recs.iter().filter(|r| r.mass).count() as u64;
    Ok(result(
        "abelian",
        Some(1),
        vec![
            Measure::exact("full odometer and final state equal over 5 policies", full, n),
            Measure::exact("half-toppling odometer and final state equal over 5 policies", half, n),
            Measure::exact("mass conserved", cons, n),
        ],
        format!("{full}/{n} exact"),
    ))
}

pub fn check_half_bound(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1000);
    let base = o.sub(0x4A1F);
    let recs = map_indexed(n as usize, o.threads, |i| {
        let s = derive(base, i as u64);
        stabilize_instance(&random_instance(s, 64, 20), s)
    });
    let recs: Vec<_> = recs.into_iter().collect::<Result<_>>()?;
    let bound = recs.iter().filter(|r| r.half_bound).count() as u64;
    let parity = recs.iter().filter(|r| r.parity).count() as u64;
    let stable = recs.iter().filter(|r| r.stable).count() as u64;
    Ok(result(
        "half-bound",
        Some(2),
        vec![
            Measure::exact("m_half <= 2 m_full at every site", bound, n),
            Measure::exact("parity equals initial parity plus odometer mod 2", parity, n),
            Measure::exact("outputs stable", stable, n),
        ],
        format!("{bound}/{n} exact"),
    ))
}

pub fn check_micro_oracle(o: &Opts) -> Result<CheckResult> {
    let n = o.n(50);
    let base = o.sub(0x3C);
    let recs = map_indexed(n as usize, o.threads, |i| -> Result<(bool, usize)> {
        let s = derive(base, i as u64);
        let mut r = BitStream::new(s, 7);
        let len = r.random_range(1..=oracle::MAX_LEN as i64);
        let particles = r.random_range(2..=oracle::MAX_PARTICLES);
        let mut init = LatticeState::new(-1, len)?;
        for _ in 0..particles {
            init.add_particles(r.random_range(0..len), 1);
        }
        let stack_seed = derive(s, 1);
        let mut lat = init.clone();
        let mut st = StackSet::new(0, len, StackLayout::Uniform, stack_seed)?;
        let odo = stabilize_full(&mut lat, &mut st, Policy::Leftmost, DEFAULT_TOPPLING_CAP)?;
        let all = oracle::all_orders(-1, init.eta_slice(), stack_seed);
        let mine = (lat.eta_slice().to_vec(), odo.counts.clone(), lat.boundary);
        Ok((all.len() == 1 && all.contains(&mine), all.len()))
    });
    let recs: Vec<_> = recs.into_iter().collect::<Result<_>>()?;
    let ok = recs.iter().filter(|r| r.0).count() as u64;
    Ok(result(
        "micro-oracle",
        Some(3),
        vec![Measure::exact("stabilize_full equals the unique outcome over all legal orders", ok, n)],
        format!("{ok}/{n} exact"),
    ))
}

// ---------------------------------------------------------- excursion facts

const MC_CHUNK: u64 = 100_000;

pub fn check_reach(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1_000_000);
    let mut ms = Vec::new();
    for ell in [2i64, 4, 8, 16] {
        let base = o.sub(0x4EAC + ell as u64);
        let parts = par_chunks(o, n, MC_CHUNK, |c, size| Ok(reach_counts(ell, size, derive(base, c))?))?;
        let hits: u64 = parts.iter().map(|p| p.0).sum();
        ms.push(Measure::within(&format!("P(reach >= {ell})"), hits, n, to_f64(exact::excursion_reach(ell)), o.z));
    }
    Ok(result("reach", Some(4), ms, String::new()))
}

pub fn check_even_visit(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1_000_000);
    let base = o.sub(0xE7E4);
    let parts = par_chunks(o, n, MC_CHUNK, |c, size| Ok(even_visit_counts(size, derive(base, c))?))?;
    let t = parts.iter().fold(EvenVisit::default(), |acc, p| EvenVisit {
        trials: acc.trials + p.trials,
        left: acc.left + p.left,
        left_even: acc.left_even + p.left_even,
    });
    let joint = to_f64(exact::even_visit_joint());
    Ok(result(
        "even-visit",
        Some(5),
        vec![
            Measure::within("P(left excursion, even visits to L-1)", t.left_even, t.trials, joint, o.z),
            Measure::within("P(even visits to L-1 | left excursion)", t.left_even, t.left, joint * 2.0, o.z),
        ],
        format!("{} excursions, {} to the left", t.trials, t.left),
    ))
}

pub fn check_bounce(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let base = o.sub(0xB0CE);
    let parts = par_chunks(o, n, 10_000, |c, size| Ok(bounce_samples(size as usize, derive(base, c))?))?;
    let mut hist = vec![0u64; 2];
    for &b in parts.iter().flatten() {
        let b = b as usize;
        if hist.len() <= b {
            hist.resize(b + 1, 0);
        }
        hist[b] += 1;
    }
    let p = exact::bounce_success();
    let tv = total_variation(&hist, |k| to_f64(exact::geometric_pmf(p, k as u32)));
    let total: u64 = hist.iter().sum();
    let odd: u64 = hist.iter().enumerate().filter(|(k, _)| k % 2 == 1).map(|(_, c)| c).sum();
    Ok(result(
        "bounce",
        Some(6),
        vec![
            Measure {
                label: "TV to Geometric(3/4)".into(),
                value: tv,
                target: 0.0,
                tolerance: 0.01,
                n: total,
                pass: tv <= 0.01,
            },
            Measure::within("P(N = 1)", hist[1], total, to_f64(p), o.z),
            Measure::within("P(N odd)", odd, total, to_f64(exact::geometric_odd(p)), o.z),
        ],
        format!("max bounce {}", hist.len() - 1),
    ))
}

// ----------------------------------------------------------- emission runs

fn merge(acc: &mut EmissionSummary, s: &EmissionSummary) {
    acc.attempts += s.attempts;
    acc.emissions += s.emissions;
    acc.right += s.right;
    acc.froze += s.froze;
    acc.after_emission += s.after_emission;
    acc.failed_after_emission += s.failed_after_emission;
    acc.left_advances += s.left_advances;
    acc.windows += s.windows;
    acc.frozen_followups += s.frozen_followups;
    acc.frozen_followups_reached += s.frozen_followups_reached;
}

/// Independent direct-backend runs of `per_run` attempts, in batches, until
/// `enough` says stop.
fn emissions_until(
    o: &Opts,
    a: i64,
    k: i64,
    salt: u64,
    per_run: u64,
    enough: impl Fn(&EmissionSummary) -> bool,
) -> Result<EmissionSummary> {
    let law = Arc::new(FrozenEscape::new(a, k)?);
    let base = o.sub(salt);
    let mut acc = EmissionSummary::default();
    let batch = 8;
    let mut next = 0u64;
    while !enough(&acc) {
        let parts = map_indexed(batch, o.threads, |i| {
            emission_run(a, k, per_run, derive(base, next + i as u64), Some(law.clone()))
        });
        for p in parts {
            merge(&mut acc, &p?);
        }
        next += batch as u64;
        if next > 100_000 {
            return Err(anyhow!("emission sampling did not reach its target"));
        }
    }
    Ok(acc)
}

pub fn check_right_emission(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let (a, k) = (16, 16i64.pow(4));
    let s = emissions_until(o, a, k, 0x4167, 5_000, |s| s.emissions >= n)?;
    let ceiling = to_f64(exact::right_emission_ceiling(a, k));
    Ok(result(
        "right-emission",
        Some(7),
        vec![Measure::below("right emissions per emission", s.right, s.emissions, ceiling, o.z)],
        format!("a={a} K={k}: {} attempts, {} froze", s.attempts, s.froze),
    ))
}

pub fn check_left_advance(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let (a, k) = (16, 16i64.pow(4));
    let s = emissions_until(o, a, k, 0x1EF7, 5_000, |s| s.windows >= n)?;
    Ok(result(
        "left-advance",
        None,
        vec![Measure::above("P(Left advances within 2 attempts)", s.left_advances, s.windows, 1.0 / 3.0, o.z)],
        format!("a={a} K={k}"),
    ))
}

pub fn check_frozen_followup(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1_000);
    let (a, k) = (8, 8i64.pow(4));
    let s = emissions_until(o, a, k, 0xF3, 2_000, |s| s.frozen_followups >= n)?;
    Ok(result(
        "frozen-followup",
        None,
        vec![Measure::exact(
            "attempts after a freeze that reach a neighbour",
            s.frozen_followups_reached,
            s.frozen_followups,
        )],
        format!("a={a} K={k}"),
    ))
}

pub fn check_failed_rearrival(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let (a, k) = (8, 64);
    let s = emissions_until(o, a, k, 0xFA17, 5_000, |s| s.after_emission >= n)?;
    let ceiling = to_f64(exact::failed_rearrival_ceiling(a, k));
    Ok(result(
        "failed-rearrival",
        None,
        vec![Measure::below(
            "failed re-arrivals per attempt after an emission",
            s.failed_after_emission,
            s.after_emission,
            ceiling,
            o.z,
        )],
        format!("a={a} K={k}"),
    ))
}

pub fn check_frozen_rate(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let mut rates = Vec::new();
    let mut ms = Vec::new();
    for a in [4i64, 8, 16] {
        let k = a.pow(4);
        let s = emissions_until(o, a, k, 0xF2A7 + a as u64, 5_000, |s| s.attempts >= n)?;
        ms.push(Measure::below(
            &format!("freeze rate at a={a} vs 8/a"),
            s.froze,
            s.attempts,
            (8.0 / a as f64).min(1.0),
            o.z,
        ));
        let p = s.froze as f64 / s.attempts as f64;
        rates.push((a, p, binomial_sigma(p, s.attempts)));
    }
    for w in rates.windows(2) {
        let (a0, p0, s0) = w[0];
        let (a1, p1, s1) = w[1];
        let gap = p0 - p1;
        let tol = 1.96 * (s0 * s0 + s1 * s1).sqrt();
        ms.push(Measure {
            label: format!("freeze rate decreases from a={a0} to a={a1}"),
            value: gap,
            target: 0.0,
            tolerance: tol,
            n,
            pass: gap > tol,
        });
    }
    Ok(result("frozen-rate", None, ms, String::new()))
}

// ------------------------------------------------------------ carpet checks

pub fn check_carpet_structure(o: &Opts) -> Result<CheckResult> {
    let n = o.n(200);
    let base = o.sub(0xCA4E);
    let combos: Vec<(i64, usize)> = [4i64, 8, 16].iter().flat_map(|&a| [2usize, 4, 8].map(|m| (a, m))).collect();
    let recs = map_indexed(n as usize, o.threads, |i| {
        let (a, m) = combos[i % combos.len()];
        let layout = BlockLayout::with_period(a, a * a, m).expect("layout");
        carpet_instance(layout, derive(base, i as u64), 2, 0.5, CheckLevel::Full)
    });
    let mut clean = 0;
    let mut conserved = 0;
    let mut frozen_ok = 0;
    let mut first_err = String::new();
    for r in recs {
        match r {
            Ok(r) => {
                clean += 1;
                conserved += r.conserved as u64;
                frozen_ok += r.frozen_ok as u64;
            }
            Err(e) if first_err.is_empty() => first_err = format!("{e:#}"),
            Err(_) => {}
        }
    }
    Ok(result(
        "carpet-structure",
        Some(8),
        vec![
            Measure::exact("runs with every structural assertion passing", clean, n),
            Measure::exact("free-particle conservation exact", conserved, n),
            Measure::exact("F_i in {0,1}, frozen particle at iK+a", frozen_ok, n),
        ],
        if first_err.is_empty() { "K = a^2 override".into() } else { first_err },
    ))
}

pub fn check_coarse_replay(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100);
    let base = o.sub(0xC0A5);
    let combos = [(4i64, 2usize), (4, 3), (4, 4), (8, 2), (8, 3), (8, 4)];
    let recs = map_indexed(n as usize, o.threads, |i| {
        let (a, m) = combos[i % combos.len()];
        let layout = BlockLayout::with_period(a, a * a, m).expect("layout");
        replay_instance(layout, derive(base, i as u64), 2, 0.5)
    });
    let recs: Vec<_> = recs.into_iter().collect::<Result<_>>()?;
    let count = |f: fn(&crate::commands::ReplayRecord) -> bool| recs.iter().filter(|r| f(r)).count() as u64;
    Ok(result(
        "coarse-replay",
        Some(9),
        vec![
            Measure::exact("F_i = F_i^i(L_{i+1})", count(|r| r.frozen_match), n),
            Measure::exact("L_i = L_i^i(L_{i+1})", count(|r| r.left_match), n),
            Measure::exact("mass balance on every prefix", count(|r| r.prefix_match), n),
        ],
        "K = a^2 override".into(),
    ))
}

// ------------------------------------------------------------- block chain

const CHAIN_A: i64 = 8;
const CHAIN_CHUNK: u64 = 10_000;

fn chain_steps(o: &Opts, n: u64, salt: u64) -> Result<BlockStats> {
    let k = CHAIN_A.pow(4);
    let base = o.sub(salt);
    let parts = par_chunks(o, n, CHAIN_CHUNK, |c, size| {
        Ok(run_block_chain(&ChainConfig::new(CHAIN_A, k, size, derive(base, c)))?)
    })?;
    let mut acc = BlockStats { loss_hist: vec![0; LOSS_BINS], ..Default::default() };
    for p in parts {
        acc.steps += p.steps;
        acc.aux_steps += p.aux_steps;
        acc.violations += p.violations;
        acc.failed_rearrivals += p.failed_rearrivals;
        acc.exits += p.exits;
        for (x, y) in acc.loss_hist.iter_mut().zip(&p.loss_hist) {
            *x += y;
        }
        if acc.first_violation.is_none() {
            acc.first_violation = p.first_violation;
        }
    }
    Ok(acc)
}

pub fn check_aux(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let s = chain_steps(o, n, 0xA0C5)?;
    Ok(result(
        "aux",
        Some(10),
        vec![
            Measure::exact("aux steps with graduation and party checks failing", s.violations, 0),
            Measure::flag("paired steps run", s.steps >= n, s.steps),
        ],
        match &s.first_violation {
            Some(v) => v.clone(),
            None => format!(
                "a={CHAIN_A} K=a^4: {} aux steps, {} failed re-arrivals, {} exits",
                s.aux_steps, s.failed_rearrivals, s.exits
            ),
        },
    ))
}

pub fn check_refresh_loss(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let s = chain_steps(o, n, 0x6E0)?;
    let ms = (1..=10)
        .map(|k| {
            Measure::below(
                &format!("P(loss >= {k})"),
                s.loss_at_least(k),
                s.aux_steps,
                (5.0f64 / 6.0).powf((k as f64 - 1.0) / 2.0),
                o.z,
            )
        })
        .collect();
    Ok(result("refresh-loss", Some(11), ms, format!("a={CHAIN_A} K=a^4")))
}

pub fn check_forced_parity(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let a = 16;
    let base = o.sub(0xF0);
    let parts = par_chunks(o, n, MC_CHUNK, |c, size| {
        let mut w = DirectWalker::new(a, a.pow(4), derive(base, c))?;
        let mut pick = BitStream::new(derive(base, c), 3);
        let (mut det, mut bad) = (0u64, 0u64);
        for _ in 0..size {
            let p = sample_path(&mut w, pick.random_range(1..a), RespawnPolicy::Uniform, false)?;
            if let Some((want, got)) = forced_parity(&p, a) {
                det += 1;
                bad += (want != got) as u64;
            }
        }
        Ok((det, bad))
    })?;
    let det: u64 = parts.iter().map(|p| p.0).sum();
    let bad: u64 = parts.iter().map(|p| p.1).sum();
    Ok(result(
        "forced-parity",
        None,
        vec![Measure::exact("forced parities that disagree", bad, 0), Measure::flag("forced cases seen", det > 0, det)],
        format!("{det} forced cases in {n} paths"),
    ))
}

pub fn check_conditional_parity(o: &Opts) -> Result<CheckResult> {
    let n = o.n(200_000);
    let a = 8;
    let base = o.sub(0xC0D);
    let parts = par_chunks(o, n, MC_CHUNK, |c, size| {
        let mut w = DirectWalker::new(a, a.pow(4), derive(base, c))?;
        Ok(conditional_parity_bins(&mut w, size, derive(base, c))?)
    })?;
    let mut bins = BTreeMap::new();
    for p in parts {
        for (key, b) in p {
            let e: &mut (u64, u64) = bins.entry(key).or_default();
            e.0 += b.n;
            e.1 += b.zeros;
        }
    }
    let min_n = 200;
    let (lo, hi) = (1.0 / 6.0, 5.0 / 6.0);
    let mut tested = 0u64;
    let mut outside = 0u64;
    let mut worst = String::new();
    for (key, (m, zeros)) in &bins {
        if *m < min_n {
            continue;
        }
        tested += 1;
        let p = *zeros as f64 / *m as f64;
        let ok = p > lo - o.z * binomial_sigma(lo, *m) && p < hi + o.z * binomial_sigma(hi, *m);
        if !ok {
            outside += 1;
            if worst.is_empty() {
                worst = format!("{key:?}: {p:.4} over {m}");
            }
        }
    }
    Ok(result(
        "conditional-parity",
        None,
        vec![Measure::exact("bins outside (1/6, 5/6)", outside, 0), Measure::flag("bins tested", tested > 0, tested)],
        if worst.is_empty() { format!("{tested} bins with at least {min_n} samples") } else { worst },
    ))
}

pub fn check_backend_cross(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100_000);
    let (a, k) = (6, 36);
    let base = o.sub(0xBAC);
    let start = |t: u64| 1 + (t % (a as u64 - 1)) as i64;
    let sum = |left: bool| -> Result<PathSummary> {
        let parts = par_chunks(o, n, MC_CHUNK, |c, size| {
            let s = derive(base, c * 2 + left as u64);
            if left {
                Ok(path_summary(&mut LiteralWalker::new(a, k, s)?, size, RespawnPolicy::Uniform, start)?)
            } else {
                Ok(path_summary(&mut DirectWalker::new(a, k, s)?, size, RespawnPolicy::Uniform, start)?)
            }
        })?;
        let mut acc = PathSummary { parity_ones: vec![0; (a + 1) as usize], ..Default::default() };
        for p in parts {
            acc.paths += p.paths;
            acc.right += p.right;
            acc.emissions += p.emissions;
            acc.failed += p.failed;
            for i in 0..4 {
                acc.kinds[i] += p.kinds[i];
            }
            for (x, y) in acc.parity_ones.iter_mut().zip(&p.parity_ones) {
                *x += y;
            }
        }
        Ok(acc)
    };
    let d = sum(false)?;
    let l = sum(true)?;
    let two = |label: String, x: u64, y: u64| {
        let (p1, p2) = (x as f64 / n as f64, y as f64 / n as f64);
        let pool = (p1 + p2) / 2.0;
        let tol = o.z * (pool * (1.0 - pool) * 2.0 / n as f64).sqrt();
        Measure { label, value: p1 - p2, target: 0.0, tolerance: tol, n, pass: (p1 - p2).abs() <= tol }
    };
    let mut ms = Vec::new();
    for (i, kind) in [PathKind::Excursion, PathKind::LongExcursion, PathKind::DoubleSided, PathKind::FailedRearrival]
        .iter()
        .enumerate()
    {
        ms.push(two(format!("{kind:?} frequency, direct minus literal"), d.kinds[i], l.kinds[i]));
    }
    ms.push(two("right-side frequency, direct minus literal".into(), d.right, l.right));
    for i in 0..=a as usize {
        ms.push(two(format!("parity({i}) frequency, direct minus literal"), d.parity_ones[i], l.parity_ones[i]));
    }
    Ok(result("backend-cross", None, ms, format!("a={a} K={k}, {n} paths per backend")))
}

// ------------------------------------------------------- activity, bootstrap

pub fn check_activity(o: &Opts) -> Result<CheckResult> {
    let n_mono = o.n(100);
    let base = o.sub(0xAC7);
    let windows = [8i64, 16, 32, 64, 128];
    let mono = map_indexed(n_mono as usize, o.threads, |i| {
        activity_proxy(&InitialLaw::Poisson(1.0), &windows, derive(base, i as u64), DEFAULT_TOPPLING_CAP)
    });
    let mut monotone = 0;
    for m in mono {
        monotone += m?.windows(2).all(|w| w[0] <= w[1]) as u64;
    }
    let reps = 200;
    let trend = |mu: f64, salt: u64| -> Result<sandpile_core::Estimate> {
        let runs = map_indexed(reps, o.threads, |i| {
            activity_proxy(&InitialLaw::Poisson(mu), &[128, 256], derive(o.sub(salt), i as u64), DEFAULT_TOPPLING_CAP)
        });
        let mut acc = Accumulator::<f64>::default();
        for r in runs {
            let r = r?;
            acc.push(r[1] as f64 - r[0] as f64);
        }
        Ok(acc.estimate())
    };
    let low = trend(0.1, 0x10)?;
    let high = trend(1.5, 0x15)?;
    Ok(result(
        "activity",
        Some(12),
        vec![
            Measure::exact("coupled odometer at 0 nondecreasing in the window", monotone, n_mono),
            Measure {
                label: "mu=1.5 growth m(256)-m(128), lower 95%".into(),
                value: high.lo95,
                target: 0.0,
                tolerance: 0.0,
                n: reps as u64,
                pass: high.lo95 > 0.0,
            },
            Measure {
                label: "mu=1.5 growth lower 95% above mu=0.1 growth upper 95%".into(),
                value: high.lo95 - low.hi95,
                target: 0.0,
                tolerance: 0.0,
                n: reps as u64,
                pass: high.lo95 > low.hi95,
            },
        ],
        format!(
            "growth mu=0.1: {:.3} [{:.3}, {:.3}]; mu=1.5: {:.1} [{:.1}, {:.1}]",
            low.mean, low.lo95, low.hi95, high.mean, high.lo95, high.hi95
        ),
    ))
}

fn smoke_config(seed: u64) -> StageConfig {
    StageConfig::new(8, 64, 8, vec![0.0, 0.0, 1.0], seed)
}

pub fn check_bootstrap(o: &Opts) -> Result<CheckResult> {
    let n = o.n(100);
    let base = o.sub(0xB007);
    // step-3 entry audit on every seed
    let entries = map_indexed(n as usize, o.threads, |i| -> Result<_> {
        let mut c = smoke_config(derive(base, i as u64));
        c.run_carpet = false;
        Ok(run_bootstrap(&c, 1)?.stages.remove(0))
    });
    let (mut e12, mut valid, mut entry_violations) = (0u64, 0u64, 0u64);
    for e in entries {
        let e = e?;
        if e.event1 && e.event2 {
            e12 += 1;
            valid += e.valid_at_step3 as u64;
        }
        entry_violations += e.violations;
    }
    // full stage 0, seeds in order until one completes cleanly
    let mut witness = None;
    let mut tried = 0;
    let mut successes = 0;
    for i in 0..n {
        tried += 1;
        let rep = run_bootstrap(&smoke_config(derive(base, i)), 1)?;
        let s = &rep.stages[0];
        successes += s.success() as u64;
        if s.carpet_ran && s.violations == 0 {
            witness = Some((i, s.clone()));
            break;
        }
    }
    let detail = match &witness {
        Some((i, s)) => format!(
            "seed #{i} completes ({tried} full runs): frozen blocks {}, boundary {}/{}, Stage_0 success {}",
            s.frozen_blocks, s.boundary_left, s.boundary_right, successes
        ),
        None => format!("no seed of {n} completed"),
    };
    Ok(result(
        "bootstrap",
        Some(13),
        vec![
            Measure::flag("stage 0 completes with zero violations on some seed", witness.is_some(), tried),
            Measure::exact("step-3 entries valid when Event1 and Event2 hold", valid, e12),
            Measure::exact("invariant violations in steps 1-2 over all seeds", entry_violations, 0),
        ],
        detail,
    ))
}

// ---------------------------------------------------------- reproducibility

/// Argument lists re-run for the byte-identity check.
pub const REPRO_RUNS: &[&[&str]] = &[
    &["stabilize", "--replicas", "4"],
    &["activity", "--replicas", "3", "--param", "windows=8,16,32"],
    &[
        "carpet",
        "--replicas",
        "3",
        "--param",
        "a=4",
        "--param",
        "k=16",
        "--param",
        "n=3",
        "--param",
        "check=full",
        "--param",
        "replay=true",
    ],
    &[
        "block",
        "--replicas",
        "2",
        "--param",
        "a=6",
        "--param",
        "k=36",
        "--param",
        "horizon=2000",
        "--param",
        "attempts=500",
    ],
    &[
        "bootstrap",
        "--replicas",
        "2",
        "--param",
        "a=4",
        "--param",
        "k=16",
        "--param",
        "m_tilde0=4",
        "--param",
        "stages=2",
    ],
    &["verify", "--suite", "micro-oracle", "--instances", "10"],
];

pub fn check_reproducibility(o: &Opts) -> Result<CheckResult> {
    let mut same = 0;
    let mut total = 0;
    let mut diff = Vec::new();
    let seed = o.seed.to_string();
    for args in REPRO_RUNS {
        for fmt in ["csv", "jsonl"] {
            let run = |threads: &str| {
                let mut v: Vec<String> = vec![
                    "sandpile-lab".into(),
                    "--seed".into(),
                    seed.clone(),
                    "--format".into(),
                    fmt.into(),
                    "--threads".into(),
                    threads.into(),
                ];
                v.extend(args.iter().map(|s| s.to_string()));
                crate::run(v)
            };
            let a = run("1");
            let b = run("1");
            let c = run("3");
            total += 1;
            if a.code == 0 && a.stdout == b.stdout && a.stdout == c.stdout && !a.stdout.is_empty() {
                same += 1;
            } else {
                diff.push(format!("{} ({fmt}, exit {})", args[0], a.code));
            }
        }
    }
    Ok(result(
        "reproducibility",
        Some(14),
        vec![Measure::exact("byte-identical reruns (1, 1 and 3 threads)", same, total)],
        if diff.is_empty() { format!("{total} command/format pairs") } else { diff.join(", ") },
    ))
}

// ------------------------------------------------------------------ streams

pub fn check_streams(o: &Opts) -> Result<CheckResult> {
    let n = o.n(1_000_000);
    let mut ms = Vec::new();
    let layout = BlockLayout::with_period(4, 16, 2)?;
    let mut st = StackSet::new(-11, 21, StackLayout::Blocks(layout), o.sub(0x5)).map_err(|e| anyhow!(e))?;
    for (site, orient) in [(2i64, Orientation::Single), (10, Orientation::Left), (10, Orientation::Right)] {
        let mut plus = 0u64;
        let mut prev = 0i8;
        let (mut sxy, mut sx, mut sxx, mut m) = (0f64, 0f64, 0f64, 0u64);
        let mut first_sum = 0i64;
        for j in 0..n {
            let d = st.draw(site, orient)?;
            plus += (d == 1) as u64;
            if j < 100_000 {
                first_sum += d as i64;
            }
            if j > 0 {
                sxy += (d as f64) * (prev as f64);
                sx += d as f64;
                sxx += 1.0;
                m += 1;
            }
            prev = d;
        }
        let mean = sx / m as f64;
        let autocorr = (sxy / m as f64 - mean * mean) / (sxx / m as f64 - mean * mean);
        let p = plus as f64 / n as f64;
        let tag = format!("{site}/{orient:?}");
        let frac_ok = (0.4985..=0.5015).contains(&p);
        ms.push(Measure {
            label: format!("{tag}: fraction of +1"),
            value: p,
            target: 0.5,
            tolerance: 0.0015,
            n,
            pass: frac_ok,
        });
        let m1 = first_sum as f64 / 100_000f64.min(n as f64);
        ms.push(Measure {
            label: format!("{tag}: mean of first 1e5"),
            value: m1,
            target: 0.0,
            tolerance: 0.02,
            n: 100_000,
            pass: m1.abs() <= 0.02,
        });
        ms.push(Measure {
            label: format!("{tag}: lag-1 autocorrelation"),
            value: autocorr,
            target: 0.0,
            tolerance: 0.005,
            n,
            pass: autocorr.abs() <= 0.005,
        });
    }
    Ok(result("streams", None, ms, String::new()))
}
