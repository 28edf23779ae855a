use sandpile_core::bootstrap::{center_of_mass, idla_fill, idla_sweep, run_bootstrap, Bootstrap, Line, StageConfig};
use sandpile_core::carpet::CheckLevel;
use sandpile_core::rng::{StackLayout, StackSet};

const CAP: u64 = 1 << 30;

/// Exact probability, over all walk realizations, that sweeping three
/// particles at the middle of `[0, 4]` fills both neighbours.
fn both_neighbours_filled() -> (f64, f64) {
    // state: counts on 0..=4, walker position (None between walks), probability
    fn go(eta: [u32; 5], walker: Option<usize>, p: f64, depth: u32, acc: &mut (f64, f64)) {
        if depth == 0 {
            acc.1 += p;
            return;
        }
        let x = match walker {
            Some(x) => x,
            None if eta[2] >= 2 => 2,
            None => {
                if eta[1] == 1 && eta[3] == 1 {
                    acc.0 += p;
                }
                return;
            }
        };
        for y in [x - 1, x + 1] {
            let mut e = eta;
            e[x] -= 1;
            let settled = e[y] == 0;
            e[y] += 1;
            let next = if y == 0 || y == 4 || settled { None } else { Some(y) };
            go(e, next, p / 2.0, depth - 1, acc);
        }
    }
    let mut acc = (0.0, 0.0);
    go([0, 0, 3, 0, 0], None, 1.0, 60, &mut acc);
    acc
}

#[test]
fn five_site_sweep_matches_enumeration() {
    let (p, lost) = both_neighbours_filled();
    assert!(lost < 1e-8);
    assert!((p - 2.0 / 3.0).abs() < 1e-8, "{p}");
    let n = 20_000u64;
    let mut hits = 0u64;
    for seed in 0..n {
        let mut line = Line::new(0, 4);
        line.set_eta(2, 3);
        let mut st = StackSet::new(0, 5, StackLayout::Uniform, seed).unwrap();
        idla_sweep(&mut line, &mut st, 0, 4, CAP).unwrap();
        assert_eq!(line.mass(0, 4), 3);
        assert_eq!(line.eta(2), 1);
        let filled = line.eta(1) + line.eta(3);
        assert!(filled >= 1 && line.eta(1) <= 1 && line.eta(3) <= 1);
        assert_eq!(filled + line.eta(0) + line.eta(4), 2);
        hits += (filled == 2) as u64;
    }
    let q = 2.0 / 3.0;
    let f = hits as f64 / n as f64;
    assert!((f - q).abs() <= 3.0 * (q * (1.0 - q) / n as f64).sqrt(), "{f}");
}

#[test]
fn stable_line_does_not_move() {
    let mut line = Line::new(-5, 5);
    for x in -4..=4 {
        line.set_eta(x, (x % 2 == 0) as u32);
    }
    let before = line.clone();
    let mut st = StackSet::new(-5, 6, StackLayout::Uniform, 1).unwrap();
    assert_eq!(idla_sweep(&mut line, &mut st, -5, 5, CAP).unwrap(), 0);
    assert_eq!(line, before);
}

#[test]
fn fill_examples() {
    let mut st = StackSet::new(-20, 21, StackLayout::Uniform, 4).unwrap();
    let mut line = Line::new(-20, 20);
    line.set_eta(0, 1);
    let before = line.clone();
    assert_eq!(idla_fill(&mut line, &mut st, &[0], &[(-19, -1), (1, 19)], -20, 20, CAP).unwrap(), 0);
    assert_eq!(line, before);

    let mut line = Line::new(-20, 20);
    line.set_eta(0, 500);
    idla_fill(&mut line, &mut st, &[0], &[(-19, -1), (1, 19)], -20, 20, CAP).unwrap();
    assert!((-19..=19).all(|x| line.eta(x) >= 1));
    assert_eq!(line.mass(-20, 20), 500);
}

#[test]
fn center_of_mass_examples() {
    let mut line = Line::new(-10, 10);
    for x in [-3, 3, -8, 8] {
        line.set_eta(x, 2);
    }
    assert_eq!(center_of_mass(&line, -10, 10, None), 0);
    let mut one = Line::new(-10, 10);
    one.set_eta(7, 1);
    assert_eq!(center_of_mass(&one, -10, 10, None), 7);
    // a = 2, K = 4, m0 = 0, m1 = 0: rho clamps to [-3, 3]
    assert_eq!(center_of_mass(&one, -10, 10, Some((2, 4, 0, 0))), 3);
    one.set_eta(-9, 1);
    assert_eq!(center_of_mass(&one, -10, 10, Some((2, 4, 0, 0))), 0);
}

#[test]
fn invalid_stage_configs() {
    let ok = StageConfig::new(4, 16, 4, vec![0.0, 0.0, 1.0], 1);
    assert!(ok.validate().is_ok());
    let single = StageConfig::new(4, 16, 4, vec![0.0, 1.0], 1);
    assert!(single.validate().is_err());
    let odd = StageConfig::new(5, 25, 4, vec![0.0, 0.0, 1.0], 1);
    assert!(odd.validate().unwrap_err().to_string().contains("even"));
    let zero = StageConfig::new(4, 16, 0, vec![0.0, 0.0, 1.0], 1);
    assert!(zero.validate().is_err());
    let bad = StageConfig::new(4, 16, 4, vec![0.5, 0.6], 1);
    assert!(bad.validate().is_err());
}

#[test]
fn first_interval_is_seeded_with_l_star() {
    let cfg = StageConfig::new(4, 16, 4, vec![0.5, 0.0, 0.0, 0.5], 2);
    let b = Bootstrap::new(cfg.clone(), 2).unwrap();
    let m0 = cfg.m(0);
    assert!((-m0..=m0).all(|x| b.line.eta(x) == 3));
}

#[test]
fn toy_stages_keep_their_invariants() {
    for seed in 0..4 {
        let mut cfg = StageConfig::new(4, 16, 4, vec![0.0, 0.0, 1.0], seed);
        cfg.check_level = CheckLevel::Full;
        cfg.growth_min = 1;
        let mut b = Bootstrap::new(cfg.clone(), 2).unwrap();
        let r0 = b.run_stage(0).unwrap();
        assert_eq!(r0.violations, 0, "{:?}", r0.first_violation);
        assert_eq!((r0.m_tilde, r0.m), (4, 5 * 16 - 2));
        assert!(r0.valid_at_step3 && r0.carpet_ran);
        assert!(r0.idla_moves > 0 && r0.half_topplings > 0);
        assert!(r0.frozen_blocks <= 9);
        assert_eq!(b.line.mass(-r0.m, r0.m), r0.mass);
        let r1 = b.run_stage(1).unwrap();
        assert_eq!(r1.violations, 0);
        let (m1, m0) = (r1.m as f64, r0.m as f64);
        assert!((r1.s_expected - 2.0 * (m1 - m0) * (m1 + m0 + 1.0) / 2.0).abs() < 1e-6);
        assert!(r1.event4_plus.is_some() && r1.event4_minus.is_some());
    }
}

#[test]
fn run_bootstrap_stops_at_first_failure() {
    let cfg = StageConfig::new(4, 16, 4, vec![0.0, 0.0, 1.0], 3);
    let rep = run_bootstrap(&cfg, 3).unwrap();
    assert_eq!(rep.stages.len(), rep.survival + rep.first_failure.is_some() as usize);
    assert!(rep.stages.len() <= 3);
}
