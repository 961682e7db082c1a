use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clustervc::pipeline::{execute, Command, Overrides, RunSpec};

#[derive(Parser)]
#[command(name = "clustervc", version, about = "Varying-coefficient mixed-effects models for clustered data")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit the coefficient curves (estimates.csv, fit.json)
    Fit(Common),
    /// Estimate the variance components (varcomp.json)
    Varcomp(Common),
    /// Simultaneous bands for every coefficient (curves.csv)
    Bands(Common),
    /// Constancy test of every coefficient (tests.csv)
    Test(Common),
    /// Full analysis (results.json, curves.csv, varcomp.json, tests.csv)
    Report(Common),
    /// Monte Carlo studies configured in the [study] table
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Input CSV: cluster_id,y,u,x1..xp,z1..zq
    #[arg(long)]
    input: Option<PathBuf>,
    /// TOML configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Bandwidth
    #[arg(long)]
    h: Option<f64>,
    /// Significance level of tests and bands
    #[arg(long)]
    level: Option<f64>,
    /// Number of evaluation grid points
    #[arg(long)]
    grid: Option<usize>,
    /// Simulation seed
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let obj = serde_json::json!({
                "error": "Usage",
                "stage": "arguments",
                "message": e.to_string().trim(),
            });
            eprintln!("{obj}");
            return ExitCode::from(2);
        }
    };
    let (command, c) = match cli.command {
        Sub::Fit(c) => (Command::Fit, c),
        Sub::Varcomp(c) => (Command::Varcomp, c),
        Sub::Bands(c) => (Command::Bands, c),
        Sub::Test(c) => (Command::Test, c),
        Sub::Report(c) => (Command::Report, c),
        Sub::Simulate(c) => (Command::Simulate, c),
    };
    let spec = RunSpec {
        command,
        input: c.input,
        config: c.config,
        out: c.out,
        overrides: Overrides {
            h: c.h,
            level: c.level,
            grid: c.grid,
            seed: c.seed,
        },
    };
    match execute(&spec) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let stage = match &e {
                clustervc::Error::Stage { stage, .. } => Some(*stage),
                _ => None,
            };
            let obj = serde_json::json!({
                "error": e.kind(),
                "stage": stage,
                "message": e.to_string(),
            });
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}
