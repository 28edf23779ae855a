use std::io::Write;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let out = sandpile_lab::run(std::env::args_os());
    std::io::stdout().write_all(&out.stdout).expect("write stdout");
    eprint!("{}", out.stderr);
    if out.code != 2 {
        eprintln!("wall time {:.2}s", t0.elapsed().as_secs_f64());
    }
    std::process::exit(out.code);
}
