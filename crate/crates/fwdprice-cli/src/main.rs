//! `fwdprice`: batch front end of the pricing and hedging engine.
//!
//! Each invocation reads one TOML configuration, runs one subcommand, and
//! writes CSV/JSON artefacts plus a `manifest.json` into the output
//! directory. Exit codes: 0 success, 2 configuration error, 3 solver
//! failure, 4 inconclusive statistical check.

mod commands;
mod config;
mod error;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::OutDir;
use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "fwdprice",
    version,
    about = "Indifference pricing and cross-hedging of claims on a non-traded asset"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// European indifference price surface.
    PriceEuro,
    /// American indifference price, exercise boundary and region.
    PriceAmerican,
    /// Marginal (γ = 0) price surface.
    Marginal,
    /// Closed-form full-information price by the distortion transform.
    Distortion,
    /// Small-γ expansion against the PDE price.
    Expansion,
    /// Monte Carlo hedging experiment.
    HedgeSim,
    /// Filter traces and posterior-consistency table.
    FilterDemo,
    /// Residual-risk scale factors over a correlation ladder.
    CorrTable,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::PriceEuro => "price-euro",
            Command::PriceAmerican => "price-american",
            Command::Marginal => "marginal",
            Command::Distortion => "distortion",
            Command::Expansion => "expansion",
            Command::HedgeSim => "hedge-sim",
            Command::FilterDemo => "filter-demo",
            Command::CorrTable => "corr-table",
        }
    }
}

/// Exclusive lock on the output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                CliError::Config(format!(
                    "cannot lock output directory {} ({e}); is another run using it?",
                    dir.display()
                ))
            })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None if matches!(cli.command, Command::CorrTable) => RunConfig::parse("")?,
        None => {
            return Err(CliError::Config(
                "--config is required for this subcommand".into(),
            ))
        }
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    let _lock = DirLock::acquire(&cli.out)?;
    let mut out = OutDir::new(&cli.out);
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let result = match cli.command {
        Command::PriceEuro => commands::price_euro(&cfg, &mut out),
        Command::PriceAmerican => commands::price_american(&cfg, &mut out),
        Command::Marginal => commands::marginal(&cfg, &mut out),
        Command::Distortion => commands::distortion(&cfg, &mut out),
        Command::Expansion => commands::expansion(&cfg, &mut out),
        Command::HedgeSim => commands::hedge_sim(&cfg, &mut out),
        Command::FilterDemo => commands::filter_demo(&cfg, &mut out),
        Command::CorrTable => commands::corr_table(&cfg, &mut out),
    };
    let (status, inconclusive) = match &result {
        Ok(w) if w.is_empty() => ("ok", w.clone()),
        Ok(w) => ("inconclusive", w.clone()),
        Err(e) => ("failed", vec![e.to_string()]),
    };
    let manifest = json!({
        "subcommand": cli.command.name(),
        "status": status,
        "messages": inconclusive,
        "seed": cfg.seed,
        "threads": cli.threads,
        "versions": { "fwdprice": fwdprice::VERSION, "fwdprice-cli": env!("CARGO_PKG_VERSION") },
        "config": cfg,
        "outputs": out.files(),
        "started_unix": started,
        "wall_time_s": clock.elapsed().as_secs_f64(),
    });
    fs::write(
        out.path("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    match result {
        Err(CliError::Solver(msg)) => {
            let path = out.path("error.json");
            fs::write(
                &path,
                serde_json::to_string_pretty(&json!({ "error": msg }))? + "\n",
            )?;
            Err(CliError::Solver(format!(
                "{msg} (diagnostics: {})",
                path.display()
            )))
        }
        Err(e) => Err(e),
        Ok(w) if !w.is_empty() => Err(CliError::Inconclusive(w.join("; "))),
        Ok(_) => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fwdprice: {e}");
            e.exit_code()
        }
    }
}
