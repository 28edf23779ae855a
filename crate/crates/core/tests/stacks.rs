use proptest::prelude::*;

use sandpile_core::lattice::{stabilize_half, LatticeState, Policy, DEFAULT_TOPPLING_CAP};
use sandpile_core::rng::{instruction, Orientation, StackLayout, StackSet};
use sandpile_core::BlockLayout;

fn two_blocks() -> StackSet {
    let layout = BlockLayout::with_period(4, 16, 2).unwrap();
    StackSet::new(0, 20, StackLayout::Blocks(layout), 11).unwrap()
}

#[test]
fn layout_forces_stream_structure() {
    let s = two_blocks();
    assert!(s.has_stream(2, Orientation::Single));
    assert!(!s.has_stream(2, Orientation::Left));
    assert!(s.has_stream(10, Orientation::Left));
    assert!(s.has_stream(10, Orientation::Right));
    assert!(!s.has_stream(10, Orientation::Single));
    assert!(s.has_stream(16, Orientation::Single));
    assert!(s.has_stream(5, Orientation::Right));
}

#[test]
fn drawing_a_missing_stream_fails() {
    let mut s = two_blocks();
    assert!(s.draw(10, Orientation::Single).is_err());
    assert!(s.draw(2, Orientation::Right).is_err());
    assert!(s.draw(25, Orientation::Single).is_err());
}

#[test]
fn successive_draws_walk_the_stream() {
    let mut s = two_blocks();
    for j in 0..200 {
        assert_eq!(s.consumed(10, Orientation::Left).unwrap(), j);
        let d = s.draw(10, Orientation::Left).unwrap();
        assert_eq!(d, instruction(11, 10, Orientation::Left, j));
    }
    // the other orientation at the same site is untouched
    assert_eq!(s.consumed(10, Orientation::Right).unwrap(), 0);
    assert_eq!(s.consumed_at(10), 200);
}

#[test]
fn same_seed_same_sequences() {
    let mut a = two_blocks();
    let mut b = two_blocks();
    for site in 0..20 {
        for o in [Orientation::Single, Orientation::Left, Orientation::Right] {
            if a.has_stream(site, o) {
                let xs: Vec<i8> = (0..130).map(|_| a.draw(site, o).unwrap()).collect();
                let ys: Vec<i8> = (0..130).map(|_| b.draw(site, o).unwrap()).collect();
                assert_eq!(xs, ys);
            }
        }
    }
}

#[test]
fn different_streams_differ() {
    let a: Vec<i8> = (0..256).map(|j| instruction(3, 10, Orientation::Left, j)).collect();
    let b: Vec<i8> = (0..256).map(|j| instruction(3, 10, Orientation::Right, j)).collect();
    let c: Vec<i8> = (0..256).map(|j| instruction(4, 10, Orientation::Left, j)).collect();
    assert_ne!(a, b);
    assert_ne!(a, c);
}

#[test]
fn consumption_equals_half_odometer() {
    let mut lat = LatticeState::from_counts(-1, &[0, 3, 0, 2, 1, 0, 4, 0]).unwrap();
    let mut s = StackSet::new(0, 8, StackLayout::Uniform, 5).unwrap();
    let odo = stabilize_half(&mut lat, &mut s, Policy::Queue, DEFAULT_TOPPLING_CAP).unwrap();
    for x in 0..8 {
        assert_eq!(s.consumed_at(x), odo.at(x), "site {x}");
    }
}

proptest! {
    #[test]
    fn instructions_are_pure(seed: u64, site in -1000i64..1000, idx in 0u64..5000) {
        let mut s = StackSet::new(site, site + 1, StackLayout::Uniform, seed).unwrap();
        for _ in 0..idx % 130 {
            s.draw(site, Orientation::Single).unwrap();
        }
        let j = idx % 130;
        prop_assert_eq!(s.draw(site, Orientation::Single).unwrap(), instruction(seed, site, Orientation::Single, j));
        prop_assert_eq!(s.peek(site, Orientation::Single, idx).unwrap(), instruction(seed, site, Orientation::Single, idx));
    }

    #[test]
    fn rebased_stacks_continue_where_they_stopped(seed: u64, n in 1usize..200) {
        let mut s = StackSet::new(0, 4, StackLayout::Uniform, seed).unwrap();
        for _ in 0..n {
            s.draw(2, Orientation::Single).unwrap();
        }
        let mut r = s.rebased(-3, 10).unwrap();
        prop_assert_eq!(r.consumed(2, Orientation::Single).unwrap(), n as u64);
        prop_assert_eq!(r.draw(2, Orientation::Single).unwrap(), s.draw(2, Orientation::Single).unwrap());
    }
}
