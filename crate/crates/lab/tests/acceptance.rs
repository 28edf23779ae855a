//! Acceptance run: one line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use sandpile_lab::parallel::default_threads;
use sandpile_lab::verify::{self, Opts, DEFAULT_Z};

const SEED: u64 = 20_240_601;

/// Wall-clock limits for the timed criteria.
fn limit(criterion: u8) -> Option<Duration> {
    match criterion {
        1 => Some(Duration::from_secs(30)),
        4 => Some(Duration::from_secs(120)),
        12 => Some(Duration::from_secs(300)),
        _ => None,
    }
}

fn main() {
    let opts = Opts { seed: SEED, z: DEFAULT_Z, threads: default_threads(), size: None };
    let mut failed = 0;
    for (criterion, (name, _, f)) in verify::SUITE.iter().filter_map(|c| c.1.map(|k| (k, *c))) {
        let t0 = Instant::now();
        let res = f(&opts);
        let took = t0.elapsed();
        let (ok, text) = match res {
            Ok(r) => (r.pass(), r.summary()),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let timed = match limit(criterion) {
            Some(l) if took > l => (false, format!(" [over the {}s limit]", l.as_secs())),
            Some(l) => (true, format!(" [limit {}s]", l.as_secs())),
            None => (true, String::new()),
        };
        let pass = ok && timed.0;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {criterion:>2} {:<17} {} ({:.1}s{}) {text}",
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            timed.1
        );
    }
    println!("{} of 14 criteria passed", 14 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
