//! `apsde`: batch front-end for the almost-periodicity experiments.
//!
//! ```text
//! apsde <subcommand> --config <path> [--seed N] [--out DIR]
//! apsde repro [--seed N] [--out DIR]
//! apsde schema
//! ```
//!
//! Exit codes: 0 success, 1 error, 2 inconclusive, 3 hypothesis or check violated.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod expr;
pub mod output;
pub mod repro;
pub mod systems;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use apsde_core::sampler::GENERATOR_ID;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use experiments::{Outcome, RunError, Status};
pub use repro::{paper_repro, ReproBundle, DEFAULT_SEED};

/// Default output directory when neither `--out` nor `output.dir` is given.
pub const OUT_DIR_ENV: &str = "APSDE_OUT_DIR";
pub const FALLBACK_OUT_DIR: &str = "apsde-out";

#[derive(Debug, Parser)]
#[command(
    name = "apsde",
    version,
    about = "Almost periodicity in distribution versus mean square for linear SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir` and the APSDE_OUT_DIR default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form kernel against quadrature and Monte Carlo.
    KernelTable(RunArgs),
    /// Scan for epsilon-almost periods of the coefficients or in mean square.
    ApScan(RunArgs),
    /// Lower bound on the mean-square increment over a (t, tau) grid.
    MsFalsify(RunArgs),
    /// Decorrelation criterion along a probe sequence.
    LemmaCheck(RunArgs),
    /// Almost periods in distribution of finite-dimensional marginals.
    DistApCheck(RunArgs),
    /// Dissipativity, exponential stability and variance condition.
    HypothesisCheck(RunArgs),
    /// Second and fourth moments and a uniform fourth-moment bound.
    Moments(RunArgs),
    /// Run whichever experiment the config names.
    Run(RunArgs),
    /// The full counterexample suite as one bundle.
    Repro(ReproArgs),
    /// Print the JSON schema of the config format.
    Schema,
}

fn resolve_out(flag: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    if let Some(p) = flag.or(cfg) {
        return p.to_path_buf();
    }
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(ConfigError::invalid(format!("cannot read {}: {e}", path.display()))))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    Ok((cfg, text))
}

/// Runs one experiment and writes its artifacts plus `report.json` into `out`.
pub fn run_config(
    cfg: &ExperimentConfig,
    config_text: &str,
    seed: u64,
    out: &Path,
) -> Result<(Outcome, PathBuf), RunError> {
    let sys = systems::build(&cfg.system, &cfg.numerics)?;
    let outcome = experiments::run(&sys, &cfg.experiment, seed)?;
    let mut sink = output::OutputSink::new(out, &cfg.output.formats)?;
    for (name, table) in &outcome.tables {
        sink.csv(name, table)?;
    }
    let kind = cfg.experiment.kind();
    let mut report = json!({
        "tool": "apsde",
        "version": env!("CARGO_PKG_VERSION"),
        "command": kind,
        "system": sys.name(),
        "config": cfg,
        "config_sha256": output::sha256_hex(config_text.as_bytes()),
        "seed": seed,
        "generator": GENERATOR_ID,
        "status": outcome.status,
        "exit_code": outcome.status.exit_code(),
        "verdict": outcome.verdict,
        "reproduce": format!("apsde {kind} --config <config> --seed {seed}"),
    });
    if sink.wants(config::Format::Json) {
        report["results"] = outcome.results.clone();
    }
    let path = sink.finish(report)?;
    Ok((outcome, path))
}

fn experiment_command(expected: Option<&str>, args: &RunArgs) -> Result<i32, RunError> {
    let (cfg, text) = load_config(&args.config)?;
    if let Some(kind) = expected {
        if cfg.experiment.kind() != kind {
            return Err(ConfigError::invalid(format!(
                "subcommand `{kind}` but config experiment kind is `{}`",
                cfg.experiment.kind()
            ))
            .into());
        }
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = resolve_out(args.out.as_deref(), cfg.output.dir.as_deref());
    let (outcome, path) = run_config(&cfg, &text, seed, &out)?;
    println!("{}: {}", cfg.experiment.kind(), outcome.verdict);
    println!("report: {}", path.display());
    Ok(outcome.status.exit_code())
}

fn repro_command(args: &ReproArgs) -> Result<i32, RunError> {
    let bundle = paper_repro(args.seed)?;
    let out = resolve_out(args.out.as_deref(), None);
    let path = bundle.write(&out)?;
    for c in &bundle.checks {
        println!("[{}] {} {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name);
    }
    println!("report: {}", path.display());
    Ok(bundle.exit_code())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes")
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::KernelTable(a) => experiment_command(Some("kernel-table"), a),
        Command::ApScan(a) => experiment_command(Some("ap-scan"), a),
        Command::MsFalsify(a) => experiment_command(Some("ms-falsify"), a),
        Command::LemmaCheck(a) => experiment_command(Some("lemma-check"), a),
        Command::DistApCheck(a) => experiment_command(Some("dist-ap-check"), a),
        Command::HypothesisCheck(a) => experiment_command(Some("hypothesis-check"), a),
        Command::Moments(a) => experiment_command(Some("moments"), a),
        Command::Run(a) => experiment_command(None, a),
        Command::Repro(a) => repro_command(a),
        Command::Schema => {
            println!("{}", pretty(&config::schema()));
            Ok(0)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
