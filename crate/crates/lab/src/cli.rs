//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, LabError, LabResult, GLOBAL_KEYS};
use crate::config::Config;
use crate::parallel::default_threads;
use crate::report::{Format, Report};
use crate::verify::{self, Opts, DEFAULT_Z};

#[derive(Debug, Parser)]
#[command(name = "sandpile-lab", version, about = "Experiments on the one-dimensional stochastic sandpile")]
pub struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    pub format: Format,
    /// Extra `key=value` setting (repeatable).
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Worker threads (default: SANDPILE_LAB_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random finite instances under full and half toppling.
    Stabilize,
    /// Coupled activity proxy m_L over growing windows.
    Activity,
    /// Carpet/hole partial stabilization on a block layout.
    Carpet,
    /// Single-block chain and emission statistics.
    Block {
        /// Run one named verification check instead.
        #[arg(long)]
        check: Option<String>,
        /// Sample size for --check.
        #[arg(long)]
        samples: Option<u64>,
    },
    /// IDLA bootstrap stages.
    Bootstrap,
    /// Property and acceptance checks.
    Verify {
        /// Comma-separated checks, `all` or `acceptance` (the default).
        #[arg(long)]
        suite: Option<String>,
        /// Sample size override for every selected check.
        #[arg(long)]
        instances: Option<u64>,
        /// Tolerance in binomial standard deviations.
        #[arg(long)]
        z: Option<f64>,
    },
}

/// Checks reachable through `block --check`.
pub const BLOCK_CHECKS: &[&str] = &[
    "reach",
    "even-visit",
    "bounce",
    "right-emission",
    "aux",
    "refresh-loss",
    "forced-parity",
    "conditional-parity",
    "backend-cross",
    "failed-rearrival",
    "left-advance",
    "frozen-followup",
    "frozen-rate",
];

fn merged_config(cli: &Cli) -> LabResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for p in &cli.params {
        let (k, v) = p.split_once('=').ok_or_else(|| {
            LabError::Config(crate::config::ConfigError(format!("command line: --param {p:?} needs KEY=VALUE")))
        })?;
        cfg.set_flag(k.trim(), v.trim());
    }
    if let Some(s) = cli.seed {
        cfg.set_flag("seed", s.to_string());
    }
    if let Some(r) = cli.replicas {
        cfg.set_flag("replicas", r.to_string());
    }
    Ok(cfg)
}

fn threads(cli: &Cli, cfg: &Config) -> LabResult<usize> {
    let t = match cli.threads {
        Some(t) => t,
        None => cfg.get("threads", default_threads())?,
    };
    Ok(t.max(1))
}

fn verify_opts(cfg: &Config, threads: usize, size: Option<u64>) -> LabResult<Opts> {
    let z: f64 = cfg.get("z", DEFAULT_Z)?;
    if !(z >= 0.0) {
        return Err(cfg.error("z", "must be a nonnegative number").into());
    }
    let size = match size {
        Some(s) => Some(s),
        None if cfg.has("instances") => Some(cfg.get("instances", 0u64)?),
        None => None,
    };
    if size == Some(0) {
        return Err(cfg.error("instances", "must be at least 1").into());
    }
    Ok(Opts { seed: cfg.get("seed", 1)?, z, threads, size })
}

fn suite_names(cfg: &Config, spec: &str) -> LabResult<Vec<&'static str>> {
    match spec {
        "all" => Ok(verify::names()),
        "acceptance" => Ok(verify::SUITE.iter().filter(|c| c.1.is_some()).map(|c| c.0).collect()),
        list => list
            .split(',')
            .map(|n| {
                let n = n.trim();
                verify::find(n).map(|c| c.0).ok_or_else(|| {
                    cfg.error("suite", format!("unknown check {n:?}; known: {}", verify::names().join(", "))).into()
                })
            })
            .collect(),
    }
}

/// Report plus one PASS/FAIL line per check for stderr.
fn run_verify(cfg: &Config, names: &[&str], opts: &Opts) -> LabResult<(Report, String)> {
    let (rep, results) = verify::run_suite(names, opts, cfg.echo())?;
    let mut notes = String::new();
    for r in &results {
        notes.push_str(&format!("{} {}: {}\n", if r.pass() { "PASS" } else { "FAIL" }, r.name, r.summary()));
    }
    Ok((rep, notes))
}

fn dispatch(cli: &Cli) -> LabResult<(Report, String)> {
    let mut cfg = merged_config(cli)?;
    let t = threads(cli, &cfg)?;
    match &cli.command {
        Command::Stabilize => Ok((commands::cmd_stabilize(&cfg, t)?, String::new())),
        Command::Activity => Ok((commands::cmd_activity(&cfg, t)?, String::new())),
        Command::Carpet => Ok((commands::cmd_carpet(&cfg, t)?, String::new())),
        Command::Bootstrap => Ok((commands::cmd_bootstrap(&cfg, t)?, String::new())),
        Command::Block { check: None, samples: None } => Ok((commands::cmd_block(&cfg, t)?, String::new())),
        Command::Block { check: None, samples: Some(_) } => {
            Err(LabError::Config(crate::config::ConfigError("command line: --samples needs --check".into())))
        }
        Command::Block { check: Some(name), samples } => {
            cfg.set_flag("check", name.as_str());
            let keys: Vec<&str> = ["check", "z", "instances"].into_iter().chain(GLOBAL_KEYS.iter().copied()).collect();
            cfg.check_keys(&keys)?;
            if !BLOCK_CHECKS.contains(&name.as_str()) {
                return Err(cfg
                    .error("check", format!("not a block check; known: {}", BLOCK_CHECKS.join(", ")))
                    .into());
            }
            let opts = verify_opts(&cfg, t, *samples)?;
            run_verify(&cfg, &[name.as_str()], &opts)
        }
        Command::Verify { suite, instances, z } => {
            if let Some(s) = suite {
                cfg.set_flag("suite", s.as_str());
            }
            if let Some(n) = instances {
                cfg.set_flag("instances", n.to_string());
            }
            if let Some(z) = z {
                cfg.set_flag("z", z.to_string());
            }
            let keys: Vec<&str> = ["suite", "z", "instances"].into_iter().chain(GLOBAL_KEYS.iter().copied()).collect();
            cfg.check_keys(&keys)?;
            let spec = cfg.raw("suite").unwrap_or("acceptance").to_string();
            let names = suite_names(&cfg, &spec)?;
            let opts = verify_opts(&cfg, t, None)?;
            run_verify(&cfg, &names, &opts)
        }
    }
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: Vec<u8>,
    pub stderr: String,
    pub code: i32,
}

/// Parse `args` (program name first), run, and render. The report is
/// written to `--out` when given, otherwise returned in `stdout`.
pub fn run<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 {
                Outcome { stdout: text.into_bytes(), stderr: String::new(), code }
            } else {
                Outcome { stdout: Vec::new(), stderr: text, code }
            };
        }
    };
    let (rep, mut stderr) = match dispatch(&cli) {
        Ok(r) => r,
        Err(e) => {
            let code = match e {
                LabError::Config(_) => 2,
                LabError::Run(_) => 1,
            };
            return Outcome { stdout: Vec::new(), stderr: format!("error: {e}\n"), code };
        }
    };
    let bytes = rep.render(cli.format);
    let mut code = if rep.passed() { 0 } else { 1 };
    if !rep.passed() {
        if rep.violations > 0 {
            stderr.push_str(&format!("{} invariant violations\n", rep.violations));
        }
        if !rep.failures.is_empty() {
            stderr.push_str(&format!("failed: {}\n", rep.failures.join(", ")));
        }
    }
    match &cli.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &bytes) {
                stderr.push_str(&format!("error: cannot write {}: {e}\n", p.display()));
                code = 1;
            }
            Outcome { stdout: Vec::new(), stderr, code }
        }
        None => Outcome { stdout: bytes, stderr, code },
    }
}
