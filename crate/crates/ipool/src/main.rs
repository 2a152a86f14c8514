use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipool::config::{Overrides, RunConfig};
use ipool::error::{Error, Result};
use ipool::oracle::{self, OracleOptions};
use ipool::{export, run};
use ipool_core::policy::PolicyKind;
use ipool_core::sim::PopulationSetting;

#[derive(Parser)]
#[command(name = "ipool", version, about = "Pooled Thompson-sampling trial simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (policy × setting) grid and write per-cell CSVs and a summary.
    Simulate(SimulateArgs),
    /// Compare the posterior and likelihood against independent references.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feed the library a perturbed kernel; every check should then fail.
        #[arg(long)]
        corrupt_kernel: bool,
    },
    /// Re-aggregate a run directory into tidy tables for plotting.
    ExportPlots {
        run_dir: PathBuf,
        /// Defaults to `<run-dir>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Week used for the last-week send fractions; defaults to the
        /// run's weeks per user.
        #[arg(long)]
        last_week: Option<u32>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; replaces the configured policies.
    #[arg(long = "policy", value_parser = parse_policy)]
    policies: Vec<PolicyKind>,
    /// Repeatable; replaces the configured settings.
    #[arg(long = "setting", value_parser = parse_setting)]
    settings: Vec<PopulationSetting>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `$IPOOL_OUT_DIR`, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_setting(s: &str) -> std::result::Result<PopulationSetting, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = PopulationSetting::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        policies: args.policies,
        settings: args.settings,
        trials: args.trials,
        seed: args.seed,
        out_dir: args.out,
        jobs: args.jobs,
    });
    cfg.validate()?;
    let out = cfg.out_dir();
    let summary = run::simulate(&cfg, &out)?;
    print!("{}", run::regret_table(&summary));
    println!("wrote {}", out.display());
    Ok(())
}

fn oracle_check(seed: u64, corrupt_kernel: bool) -> Result<bool> {
    let checks = oracle::run_all(&OracleOptions { seed, corrupt_kernel });
    for c in &checks {
        println!(
            "{} {:<28} max deviation {:.3e} (tolerance {:.0e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.deviation,
            c.tolerance
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn export_plots(run_dir: PathBuf, out: Option<PathBuf>, last_week: Option<u32>) -> Result<()> {
    let last_week = match last_week {
        Some(w) => w,
        None => {
            let echo = run_dir.join("config.toml");
            if echo.exists() {
                RunConfig::load(&echo)?.trial.weeks_per_user
            } else {
                RunConfig::default().trial.weeks_per_user
            }
        }
    };
    let out = out.unwrap_or_else(|| run_dir.join("plots"));
    let e = export::export(&run_dir, &out, last_week)?;
    for f in &e.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args).map(|()| true),
        Command::OracleCheck { seed, corrupt_kernel } => oracle_check(seed, corrupt_kernel),
        Command::ExportPlots { run_dir, out, last_week } => export_plots(run_dir, out, last_week).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => report(&e),
    }
}
