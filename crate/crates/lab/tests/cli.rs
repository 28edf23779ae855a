use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sandpile-lab"))
        .args(args)
        .env("SANDPILE_LAB_THREADS", "2")
        .output()
        .expect("spawn sandpile-lab")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn abelian_suite_passes() {
    let out = lab(&["verify", "--suite", "abelian", "--instances", "1000"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.starts_with("# schema=verify/1 hash="));
    assert!(s.lines().nth(2).unwrap() == "check,criterion,measure,value,target,tolerance,n,pass");
    assert!(s.lines().filter(|l| l.starts_with("abelian,1,")).all(|l| l.ends_with(",true")));
}

#[test]
fn odd_block_width_is_a_config_error() {
    let out = lab(&["bootstrap", "--param", "a=7"]);
    assert_eq!(out.status.code(), Some(2));
    let e = text(&out.stderr);
    assert!(e.contains("command line: a:"), "{e}");
    assert!(e.contains("even"), "{e}");
    assert!(out.stdout.is_empty());
}

#[test]
fn odd_block_width_in_file_cites_the_line() {
    let dir = std::env::temp_dir().join(format!("sandpile-lab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("boot.cfg");
    std::fs::write(&p, "# stage config\nk = 64\na = 9\n").unwrap();
    let out = lab(&["bootstrap", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = text(&out.stderr);
    assert!(e.contains(&format!("{}:3: a:", p.display())), "{e}");
    assert!(e.contains("even"), "{e}");
}

#[test]
fn malformed_config_line() {
    let dir = std::env::temp_dir().join(format!("sandpile-lab-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("bad.cfg");
    std::fs::write(&p, "a = 4\nthis line has no equals\n").unwrap();
    let out = lab(&["carpet", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains(&format!("{}:2:", p.display())), "{}", text(&out.stderr));
}

#[test]
fn unknown_key_is_rejected() {
    let out = lab(&["stabilize", "--param", "colour=blue"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("colour"));
}

#[test]
fn zero_tolerance_fails_a_statistical_suite() {
    let out = lab(&["verify", "--suite", "reach", "--instances", "20000", "--param", "z=0"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("failed: reach"));
}

#[test]
fn block_check_even_visit() {
    let out = lab(&["block", "--check", "even-visit", "--samples", "200000"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.contains("even-visit,5,"));
    assert!(text(&out.stderr).contains("PASS even-visit"));
}

#[test]
fn block_check_rejects_lattice_checks() {
    let out = lab(&["block", "--check", "abelian"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn jsonl_ends_with_aggregate() {
    let out = lab(&["stabilize", "--replicas", "3", "--format", "jsonl"]);
    assert_eq!(out.status.code(), Some(0));
    let s = text(&out.stdout);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 4);
    let last: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(last["record"], "aggregate");
    assert_eq!(last["replicas"], 3);
}

#[test]
fn out_flag_writes_file() {
    let dir = std::env::temp_dir().join(format!("sandpile-lab-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("act.csv");
    let out = lab(&["activity", "--replicas", "2", "--param", "windows=4,8", "--out", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(out.stdout.is_empty());
    let body = std::fs::read_to_string(&p).unwrap();
    assert!(body.starts_with("# schema=activity/1"));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["carpet", "--seed", "5", "--replicas", "4", "--param", "a=4", "--param", "k=16"];
    let a = lab(&args);
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "1"]);
    let b = lab(&with_threads);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}
