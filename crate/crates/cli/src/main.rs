//! `rprl`: runs one scenario file and writes its artifacts.
//!
//! Exit status is 0 when the run succeeded and every requested check passed,
//! 1 when a check failed, 2 on configuration or solver errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rprl_core::{load_scenario, run_scenario, RunOptions};

#[derive(Debug, Parser)]
#[command(
    name = "rprl",
    version,
    about = "Tabular robust RL with reward-preserving attacks"
)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run vi, rvi and preserving-rvi side by side on the scenario's world.
    #[arg(long)]
    compare: bool,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match load_scenario(&args.scenario) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match run_scenario(
        &cfg,
        &args.out,
        RunOptions {
            compare: args.compare,
        },
    ) {
        Ok(summary) => {
            if !args.quiet {
                for line in &summary.lines {
                    println!("{line}");
                }
                println!(
                    "wrote {} files to {}",
                    summary.artifacts.len(),
                    args.out.display()
                );
            }
            if summary.checks_passed {
                ExitCode::SUCCESS
            } else {
                if args.quiet {
                    eprintln!(
                        "checks failed; see {}",
                        args.out.join("summary.txt").display()
                    );
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
