//! Paired run of the parity carpet and the auxiliary process.

use serde::{Deserialize, Serialize};

use super::aux::{leftmost_one, AuxState};
use super::path::{sample_path, DirectWalker, PathKind, RespawnPolicy, Walker};
use crate::error::{Result, SandpileError};
use crate::rng::BitStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChainInit {
    Base,
    /// `0^z 1 ?...?` with `z = floor(eps * a)` leading zeros.
    EpsilonBase(f64),
    Explicit(u64),
    Exit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub a: i64,
    pub k: i64,
    pub init: ChainInit,
    /// Number of paths.
    pub horizon: u64,
    pub seed: u64,
    pub policy: RespawnPolicy,
    pub check: bool,
    /// Record `N` and `L` every this many steps (0 = never).
    pub sample_every: u64,
}

impl ChainConfig {
    pub fn new(a: i64, k: i64, horizon: u64, seed: u64) -> Self {
        Self {
            a,
            k,
            init: ChainInit::Base,
            horizon,
            seed,
            policy: RespawnPolicy::Uniform,
            check: true,
            sample_every: 0,
        }
    }
}

pub const LOSS_BINS: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub steps: u64,
    pub segments: u64,
    pub exits: u64,
    /// Segments whose first visit to Base came before Exit.
    pub base_before_exit: u64,
    pub exit_before_base: u64,
    pub base_hits: u64,
    pub failed_rearrivals: u64,
    pub tau_exit_zero: bool,
    /// `loss_hist[k]`: steps with refresh loss `k` (last bin collects the rest).
    pub loss_hist: Vec<u64>,
    pub aux_steps: u64,
    pub violations: u64,
    pub first_violation: Option<String>,
    pub n_samples: Vec<u32>,
    pub l_samples: Vec<u32>,
    pub kinds: [u64; 4],
}

impl BlockStats {
    /// Steps with loss at least `k`.
    pub fn loss_at_least(&self, k: usize) -> u64 {
        self.loss_hist.iter().skip(k).sum()
    }
}

fn init_state(cfg: &ChainConfig, rng: &mut BitStream) -> Result<(u64, AuxState)> {
    let a = cfg.a;
    let random_above = |rng: &mut BitStream, from: i64| {
        let mut m = 0u64;
        for i in from..=a {
            if rng.next_bit() {
                m |= 1 << i;
            }
        }
        m
    };
    Ok(match cfg.init {
        ChainInit::Base => {
            let truth = 0b10 | random_above(rng, 2);
            (truth, AuxState::base_like(a, 1))
        }
        ChainInit::EpsilonBase(eps) => {
            let z = ((eps * a as f64).floor() as i64).clamp(0, a);
            let truth = (1u64 << z) | random_above(rng, z + 1);
            (truth, AuxState::base_like(a, z))
        }
        ChainInit::Explicit(mask) => {
            if a < 63 && mask >> (a + 1) != 0 {
                return Err(SandpileError::Config(format!("explicit carpet {mask:#b} has bits beyond a = {a}")));
            }
            (mask, AuxState::explicit(a, mask))
        }
        ChainInit::Exit => (0, AuxState::explicit(a, 0)),
    })
}

pub fn run_block_chain(cfg: &ChainConfig) -> Result<BlockStats> {
    let mut w = DirectWalker::new(cfg.a, cfg.k, cfg.seed)?;
    run_block_chain_with(cfg, &mut w)
}

pub fn run_block_chain_with<W: Walker>(cfg: &ChainConfig, w: &mut W) -> Result<BlockStats> {
    if cfg.horizon == 0 {
        return Err(SandpileError::Config("horizon must be at least 1".into()));
    }
    let a = cfg.a;
    let mut rng = BitStream::new(cfg.seed, 0x1417);
    let mut stats = BlockStats { loss_hist: vec![0; LOSS_BINS], ..Default::default() };
    let (mut truth, mut aux) = init_state(cfg, &mut rng)?;
    stats.segments = 1;
    if truth == 0 {
        stats.tau_exit_zero = true;
        stats.exits = 1;
        stats.exit_before_base = 1;
        return Ok(stats);
    }
    let mut seen_base = false;
    while stats.steps < cfg.horizon {
        let l = leftmost_one(truth, a);
        let path = sample_path(w, l, cfg.policy, false)?;
        let after = truth ^ path.parity;
        stats.kinds[path.kind as usize] += 1;
        if path.kind == PathKind::FailedRearrival {
            stats.failed_rearrivals += 1;
            aux = AuxState::explicit(a, after);
        } else {
            let st = aux.step(&path, after)?;
            stats.aux_steps += 1;
            let loss = st.loss().max(0) as usize;
            stats.loss_hist[loss.min(LOSS_BINS - 1)] += 1;
            if cfg.check {
                if let Err(e) = aux.check(after) {
                    stats.violations += 1;
                    stats.first_violation.get_or_insert_with(|| e.to_string());
                }
            }
        }
        truth = after;
        stats.steps += 1;
        if cfg.sample_every > 0 && stats.steps % cfg.sample_every == 0 {
            stats.n_samples.push(aux.n());
            stats.l_samples.push(aux.leftmost() as u32);
        }
        if aux.is_base() {
            stats.base_hits += 1;
            if !seen_base {
                seen_base = true;
                stats.base_before_exit += 1;
            }
        }
        if truth == 0 {
            stats.exits += 1;
            if !seen_base {
                stats.exit_before_base += 1;
            }
            if stats.steps < cfg.horizon {
                let (t, x) = init_state(cfg, &mut rng)?;
                truth = t;
                aux = x;
                seen_base = false;
                stats.segments += 1;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_start_is_immediate() {
        let mut cfg = ChainConfig::new(8, 4096, 10, 1);
        cfg.init = ChainInit::Exit;
        let s = run_block_chain(&cfg).unwrap();
        assert!(s.tau_exit_zero);
        assert_eq!(s.steps, 0);
    }

    #[test]
    fn paired_run_has_no_violations() {
        for (a, k) in [(6, 36), (8, 64), (12, 144)] {
            let cfg = ChainConfig::new(a, k, 20_000, 7);
            let s = run_block_chain(&cfg).unwrap();
            assert_eq!(s.violations, 0, "{:?}", s.first_violation);
            assert_eq!(s.steps, 20_000);
        }
    }

    #[test]
    fn explicit_start_with_high_bits_rejected() {
        let mut cfg = ChainConfig::new(4, 256, 10, 1);
        cfg.init = ChainInit::Explicit(1 << 9);
        assert!(run_block_chain(&cfg).is_err());
    }
}
