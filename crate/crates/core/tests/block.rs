use proptest::prelude::*;

use sandpile_core::block::aux::{leftmost_one, AuxState, Sym};
use sandpile_core::block::chain::{run_block_chain, ChainConfig, ChainInit};
use sandpile_core::block::emissions::{summarize, DirectEmissions, EmissionBackend};
use sandpile_core::block::path::{
    parity_of_path, sample_path, step_carpet, DirectWalker, LiteralWalker, Path, PathKind, RespawnPolicy, Side,
};
use sandpile_core::carpet::{CarpetState, Event};
use sandpile_core::lattice::LatticeState;
use sandpile_core::rng::{BitStream, StackLayout, StackSet};
use sandpile_core::BlockLayout;

#[test]
fn local_time_and_parity_examples() {
    let (lo, lt, par) = parity_of_path(&[1, 2, 1]).unwrap();
    assert_eq!(lo, 1);
    assert_eq!(lt, vec![1, 1]);
    assert_eq!(par, vec![1, 1]);
    let (lo, lt, par) = parity_of_path(&[1, 2, 3, 2, 1]).unwrap();
    assert_eq!(lo, 1);
    assert_eq!(lt, vec![1, 2, 1]);
    assert_eq!(par[1], 0);
    assert_eq!(par[2], 1);
    assert!(parity_of_path(&[]).is_err());
}

fn path(start: i64, min: i64, max: i64, parity: u64) -> Path {
    Path {
        start,
        kind: PathKind::Excursion,
        side: if max > start { Side::Right } else { Side::Left },
        range_min: min,
        range_max: max,
        parity,
        steps: 0,
        emissions: 0,
        local_time: None,
        positions: None,
    }
}

#[test]
fn carpet_update_is_xor() {
    assert_eq!(step_carpet(0b1010, &path(1, 1, 1, 0)), 0b1010);
    assert_eq!(step_carpet(0b0010, &path(1, 1, 2, 0b110)), 0b0100);
}

#[test]
fn refresh_hides_range_except_start() {
    // L = 1 with a right excursion to 4 over a = 6: sites 2..=4 hidden, 1 becomes 0
    let a = 6;
    let truth = 0b100_0110u64;
    let mut aux = AuxState::explicit(a, truth);
    let p = path(1, 1, 4, 0b1_1010);
    let after = truth ^ p.parity;
    aux.step(&p, after).unwrap();
    assert_eq!(aux.syms[1], Sym::Zero);
    let l = leftmost_one(after, a);
    for i in 2..=4 {
        if i != l && i != l + 1 {
            assert_eq!(aux.syms[i as usize], Sym::Unknown, "{}", aux.render());
        }
    }
    aux.check(after).unwrap();
}

#[test]
fn exit_start_has_zero_exit_time() {
    let mut cfg = ChainConfig::new(6, 36, 10, 1);
    cfg.init = ChainInit::Exit;
    let s = run_block_chain(&cfg).unwrap();
    assert!(s.tau_exit_zero);
}

#[test]
fn type_two_paths_start_at_a_and_end_at_l() {
    let mut w = DirectWalker::new(8, 16, 5).unwrap();
    let mut seen = 0;
    for t in 0..20_000 {
        let l = 1 + t % 7;
        let p = sample_path(&mut w, l, RespawnPolicy::Right, true).unwrap();
        let q = p.positions.as_ref().unwrap();
        assert_eq!(q[0], l);
        assert_eq!(*q.last().unwrap(), l);
        if p.kind != PathKind::Excursion {
            seen += 1;
            let entry = q.iter().rposition(|&x| x == 9 || x == -1).unwrap();
            assert_eq!(q[entry + 1], 8, "{q:?}");
        }
    }
    assert!(seen > 100);
}

#[test]
fn frozen_attempts_reach_a_neighbour() {
    let mut b = DirectEmissions::new(6, 36, 0b10, 3).unwrap();
    let s = summarize(&b.run(3000).unwrap());
    assert!(s.frozen_followups > 0);
    assert_eq!(s.frozen_followups, s.frozen_followups_reached);
}

/// One-block carpet sharing the walker's stacks, hole empty at the leftmost
/// odd site of `omega`.
fn coupled_carpet(a: i64, k: i64, omega: u64) -> CarpetState {
    let l = BlockLayout::with_period(a, k, 1).unwrap();
    let mut lat = LatticeState::new(l.left_end(), l.right_end()).unwrap();
    for x in lat.sites() {
        lat.set_eta(x, 1);
    }
    for i in 0..=a {
        lat.set_omega(i, (omega >> i & 1) as u8);
    }
    lat.set_eta(leftmost_one(omega, a), 0);
    CarpetState::new(l, lat).unwrap()
}

fn block_parity(st: &CarpetState, a: i64) -> u64 {
    (0..=a).map(|i| (st.lattice().omega(i) as u64) << i).sum()
}

/// Run the carpet until the current path is over: the hot particle is back
/// at the hole. Emitted particles re-enter at `a`.
fn carpet_path(st: &mut CarpetState, stacks: &mut StackSet, a: i64, first: bool) -> Event {
    if first {
        st.inject(st.holes()[0]).unwrap();
    }
    loop {
        match st.step(stacks).unwrap() {
            Some(out) => match out.primary {
                Event::Emit { .. } => st.inject(a).unwrap(),
                e => return e,
            },
            None => unreachable!("a free particle is always present"),
        }
    }
}

#[test]
fn chain_replays_the_one_block_carpet() {
    let (a, k) = (6, 36);
    let l = BlockLayout::with_period(a, k, 1).unwrap();
    let mut paths = 0;
    for seed in 0..60u64 {
        let mut r = BitStream::new(seed, 9);
        let omega = ((r.next_f64() * (1u64 << (a + 1)) as f64) as u64) | 1 << 2;
        let mut w = LiteralWalker::new(a, k, seed).unwrap();
        let mut stacks = StackSet::new(l.left_end() + 1, l.right_end(), StackLayout::Blocks(l), seed).unwrap();
        let mut st = coupled_carpet(a, k, omega);
        let mut om = omega;
        for t in 0..400 {
            let p = sample_path(&mut w, leftmost_one(om, a), RespawnPolicy::Right, false).unwrap();
            om = step_carpet(om, &p);
            let ev = carpet_path(&mut st, &mut stacks, a, t == 0);
            paths += 1;
            assert_eq!(block_parity(&st, a), om, "seed {seed} step {t}");
            if om == 0 {
                assert_eq!(ev, Event::Froze { block: 0 });
                break;
            }
            assert_eq!(ev, Event::Excursion { block: 0, hole: leftmost_one(om, a) });
        }
    }
    assert!(paths > 500);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aux_invariants_along_sampled_paths(seed: u64, a in 4i64..14, steps in 1usize..300) {
        let mut w = DirectWalker::new(a, a.pow(4), seed).unwrap();
        let mut truth = 0b10u64;
        let mut aux = AuxState::base_like(a, 1);
        let mut r = BitStream::new(seed, 2);
        // a random truth consistent with the Base state
        for i in 2..=a {
            truth |= (r.next_bit() as u64) << i;
        }
        aux.check(truth).unwrap();
        for _ in 0..steps {
            if truth == 0 {
                break;
            }
            let p = sample_path(&mut w, leftmost_one(truth, a), RespawnPolicy::Uniform, false).unwrap();
            if p.kind == PathKind::FailedRearrival {
                break;
            }
            truth = step_carpet(truth, &p);
            aux.step(&p, truth).unwrap();
            prop_assert!(aux.check(truth).is_ok(), "{} vs {:b}", aux.render(), truth);
            prop_assert_eq!(aux.leftmost(), leftmost_one(truth, a));
        }
    }
}
