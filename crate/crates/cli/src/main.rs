use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mortkit::scenario::{
    diff_reports, make_synthetic_fixture, run_pipeline, FixtureParams, RunConfig, RunOptions, RunReport,
    ScenarioStatus,
};

/// Multi-population stochastic mortality projections.
#[derive(Parser)]
#[command(name = "mortkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ungroup, calibrate, project and summarize every scenario of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scenarios run concurrently (default: all of them).
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic dataset, its configuration and the true parameters.
    Fixture {
        /// Generator parameters (TOML); built-in defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-quantity differences `b - a` between two reports.
    Diff { a: PathBuf, b: PathBuf },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn run(config_path: &Path, jobs: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, String> {
    let text = read(config_path)?;
    let config = RunConfig::from_toml(&text).map_err(|e| e.to_string())?;
    let options = RunOptions {
        jobs,
        seed,
        out_dir: out,
        ..RunOptions::for_config_file(config_path)
    };
    let out_dir = options.output_dir(&config);
    let report = run_pipeline(&config, &text, &options).map_err(|e| e.to_string())?;
    for s in &report.scenarios {
        match &s.status {
            ScenarioStatus::Ok => println!("{}: ok", s.id),
            ScenarioStatus::Failed { stage, message } => println!("{}: failed at {stage:?}: {message}", s.id),
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("report: {}", out_dir.join("report.json").display());
    Ok(if report.failed_scenarios() > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn fixture(params: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<ExitCode, String> {
    let params = match params {
        Some(p) => FixtureParams::from_toml(&read(p)?).map_err(|e| e.to_string())?,
        None => FixtureParams::default(),
    };
    std::fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let truth = make_synthetic_fixture(&params, seed.unwrap_or(params.seed), out).map_err(|e| e.to_string())?;
    println!("config: {}", truth.config_path.display());
    println!("truth: {}", out.join("truth.json").display());
    Ok(ExitCode::SUCCESS)
}

fn diff(a: &Path, b: &Path) -> Result<ExitCode, String> {
    let load = |p: &Path| RunReport::from_json(&read(p)?).map_err(|e| format!("{}: {e}", p.display()));
    let d = diff_reports(&load(a)?, &load(b)?).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string_pretty(&d).expect("diff serializes"));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, jobs, seed, out } => run(&config, jobs, seed, out),
        Command::Fixture { params, out, seed } => fixture(params.as_deref(), &out, seed),
        Command::Diff { a, b } => diff(&a, &b),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
