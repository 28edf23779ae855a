use proptest::prelude::*;

use sandpile_core::lattice::{
    activity_proxy, stabilize_full, stabilize_half, InitialLaw, LatticeState, Odometer, Policy, DEFAULT_TOPPLING_CAP,
};
use sandpile_core::rng::{StackLayout, StackSet};

fn stacks(state: &LatticeState, seed: u64) -> StackSet {
    StackSet::new(state.lo() + 1, state.hi(), StackLayout::Uniform, seed).unwrap()
}

fn full(init: &LatticeState, seed: u64, policy: Policy) -> (LatticeState, Odometer) {
    let mut s = init.clone();
    let odo = stabilize_full(&mut s, &mut stacks(init, seed), policy, DEFAULT_TOPPLING_CAP).unwrap();
    (s, odo)
}

fn half(init: &LatticeState, seed: u64, policy: Policy) -> (LatticeState, Odometer) {
    let mut s = init.clone();
    let odo = stabilize_half(&mut s, &mut stacks(init, seed), policy, DEFAULT_TOPPLING_CAP).unwrap();
    (s, odo)
}

const POLICIES: [Policy; 5] =
    [Policy::Leftmost, Policy::Rightmost, Policy::Queue, Policy::Random(1), Policy::Random(77)];

#[test]
fn forced_full_toppling() {
    // first two instructions at site 1 under seed 0, then build the expected state
    let init = LatticeState::from_counts(-1, &[0, 2, 0]).unwrap();
    let st = stacks(&init, 0);
    let (d1, d2) = (
        st.peek(1, sandpile_core::Orientation::Single, 0).unwrap(),
        st.peek(1, sandpile_core::Orientation::Single, 1).unwrap(),
    );
    let mut want = [0u32, 0, 0];
    want[(1 + d1) as usize] += 1;
    want[(1 + d2) as usize] += 1;
    let mut s = init.clone();
    let mut stk = stacks(&init, 0);
    s.full_topple(&mut stk, 1).unwrap();
    assert_eq!(s.eta_slice(), &want);
    assert_eq!(stk.consumed_at(1), 2);
}

#[test]
fn single_particles_are_stable() {
    let init = LatticeState::from_counts(-1, &[1; 9]).unwrap();
    let (s, odo) = full(&init, 3, Policy::Queue);
    assert_eq!(odo.total(), 0);
    assert_eq!(s, init);
}

#[test]
fn empty_lattice_has_zero_half_odometer() {
    let init = LatticeState::new(-1, 10).unwrap();
    assert_eq!(half(&init, 1, Policy::Leftmost).1.total(), 0);
}

#[test]
fn half_legality_examples() {
    let mut s = LatticeState::new(-1, 3).unwrap();
    s.set_eta(0, 1);
    s.set_omega(0, 1);
    assert!(s.is_half_legal(0));
    s.set_omega(0, 0);
    assert!(!s.is_half_legal(0));
    assert!(!s.is_half_legal(1));
    s.set_eta(1, 2);
    assert!(s.is_half_legal(1));
}

#[test]
fn empty_law_gives_zero_activity() {
    let m = activity_proxy(&InitialLaw::Deterministic(0), &[8, 16, 32], 4, DEFAULT_TOPPLING_CAP).unwrap();
    assert_eq!(m, vec![0, 0, 0]);
}

#[test]
fn coupled_windows_are_monotone() {
    for seed in 0..20 {
        let m = activity_proxy(&InitialLaw::Poisson(1.0), &[8, 16, 32], seed, DEFAULT_TOPPLING_CAP).unwrap();
        assert!(m.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {m:?}");
    }
}

#[test]
fn activity_rejects_bad_windows() {
    assert!(activity_proxy(&InitialLaw::Poisson(1.0), &[16, 8], 0, 10).is_err());
    assert!(activity_proxy(&InitialLaw::Poisson(-1.0), &[8], 0, 10).is_err());
}

#[test]
fn toppling_cap_is_an_error() {
    let init = LatticeState::from_counts(-1, &[30; 20]).unwrap();
    let mut s = init.clone();
    assert!(stabilize_full(&mut s, &mut stacks(&init, 0), Policy::Queue, 10).is_err());
}

fn instance() -> impl Strategy<Value = (LatticeState, u64)> {
    (prop::collection::vec(0u32..4, 1..=40), any::<u64>()).prop_map(|(mut eta, seed)| {
        // at most 20 particles
        let mut left = 20u32;
        for e in eta.iter_mut() {
            *e = (*e).min(left);
            left -= *e;
        }
        (LatticeState::from_counts(-1, &eta).unwrap(), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn abelian_full((init, seed) in instance()) {
        let (s0, o0) = full(&init, seed, POLICIES[0]);
        for p in &POLICIES[1..] {
            let (s, o) = full(&init, seed, *p);
            prop_assert_eq!(&s, &s0);
            prop_assert_eq!(&o, &o0);
        }
        prop_assert!(s0.is_full_stable());
        prop_assert_eq!(s0.total_mass(), init.total_mass());
    }

    #[test]
    fn abelian_half_and_bound((init, seed) in instance()) {
        let (s0, o0) = half(&init, seed, POLICIES[0]);
        for p in &POLICIES[1..] {
            let (s, o) = half(&init, seed, *p);
            prop_assert_eq!(&s, &s0);
            prop_assert_eq!(&o, &o0);
        }
        prop_assert!(s0.is_half_stable());
        let (_, of) = full(&init, seed, Policy::Leftmost);
        for x in init.sites() {
            prop_assert!(o0.at(x) <= 2 * of.at(x), "site {}", x);
            prop_assert_eq!(s0.omega(x) as u64, (init.omega(x) as u64 + o0.at(x)) % 2);
        }
    }

    #[test]
    fn odometer_is_monotone_in_particles((init, seed) in instance(), pick: prop::sample::Index) {
        let sites: Vec<i64> = init.sites().collect();
        let x = sites[pick.index(sites.len())];
        let mut more = init.clone();
        more.add_particles(x, 1);
        let (_, o) = full(&init, seed, Policy::Queue);
        let (_, o2) = full(&more, seed, Policy::Queue);
        for y in init.sites() {
            prop_assert!(o2.at(y) >= o.at(y));
        }
    }
}
