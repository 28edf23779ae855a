//! Exhaustive search over every legal full-toppling order on micro instances.
//! Independent of the core scheduler: instructions are looked up directly.

use std::collections::{BTreeSet, HashSet};

use sandpile_core::rng::{instruction, Orientation};

/// Final interior counts, odometer and boundary tallies.
pub type Outcome = (Vec<u32>, Vec<u64>, [u64; 2]);

pub const MAX_PARTICLES: u32 = 4;
pub const MAX_LEN: usize = 9;

/// All outcomes reachable by running legal topplings to stability in every
/// possible order. Interior sites are `lo+1 ..= lo+eta.len()`; `lo` and the
/// site after the last interior one absorb. Stacks are those of
/// `StackSet::new(lo+1, hi, Uniform, seed)`.
pub fn all_orders(lo: i64, eta: &[u32], seed: u64) -> BTreeSet<Outcome> {
    assert!(eta.len() <= MAX_LEN && eta.iter().sum::<u32>() <= MAX_PARTICLES, "not a micro instance");
    let n = eta.len();
    let mut outcomes = BTreeSet::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut stack = vec![vec![0u64; n]];
    while let Some(odo) = stack.pop() {
        if !seen.insert(odo.clone()) {
            continue;
        }
        let (state, bnd) = replay(lo, eta, seed, &odo);
        let unstable: Vec<usize> = (0..n).filter(|&i| state[i] >= 2).collect();
        if unstable.is_empty() {
            outcomes.insert((state, odo, bnd));
            continue;
        }
        for i in unstable {
            let mut next = odo.clone();
            next[i] += 1;
            stack.push(next);
        }
    }
    outcomes
}

/// Configuration after `odo[i]` topplings at each site, in any order.
fn replay(lo: i64, eta: &[u32], seed: u64, odo: &[u64]) -> (Vec<u32>, [u64; 2]) {
    let n = eta.len();
    let mut net: Vec<i64> = eta.iter().map(|&e| e as i64).collect();
    let mut bnd = [0u64; 2];
    for (i, &m) in odo.iter().enumerate() {
        let x = lo + 1 + i as i64;
        net[i] -= 2 * m as i64;
        for j in 0..2 * m {
            let y = i as i64 + instruction(seed, x, Orientation::Single, j) as i64;
            if y < 0 {
                bnd[0] += 1;
            } else if y as usize >= n {
                bnd[1] += 1;
            } else {
                net[y as usize] += 1;
            }
        }
    }
    (net.iter().map(|&v| u32::try_from(v).expect("reachable state")).collect(), bnd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_at_one_site_has_one_outcome() {
        let out = all_orders(-2, &[0, 2, 0], 3);
        assert_eq!(out.len(), 1);
        let (eta, odo, bnd) = out.into_iter().next().unwrap();
        assert_eq!(eta.iter().sum::<u32>() as u64 + bnd[0] + bnd[1], 2);
        assert!(odo[1] >= 1);
    }

    #[test]
    fn stable_input_is_its_own_outcome() {
        let out = all_orders(0, &[1, 0, 1, 1], 9);
        assert_eq!(out.into_iter().collect::<Vec<_>>(), vec![(vec![1, 0, 1, 1], vec![0; 4], [0, 0])]);
    }
}
