use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cphase_mps_cli::config::Overrides;
use cphase_mps_cli::{self as cli, RunOptions};

#[derive(Parser)]
#[command(name = "cphase-mps", version, about = "Feedback-loop optomechanical CPHASE simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the protocol over the g0 x n_rep sweep.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also dump the final physical state of each point.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Check parameters and estimate cost without simulating.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Compare the MPS pipeline against dense evolution on random toy chains.
    #[command(hide = true)]
    VerifyOracle {
        #[command(flatten)]
        common: Common,
    },
    /// Find the coupling giving a pi phase for each n_rep.
    PiSearch {
        #[command(flatten)]
        common: Common,
    },
    /// Semiclassical phase tables and dephasing estimates.
    Semiclassical {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 means one per core.
    #[arg(long, env = "CPHASE_THREADS")]
    threads: Option<usize>,
    /// Allow full-scale waveguides.
    #[arg(long)]
    long_run: bool,
    /// Parameter override, e.g. `--set d_mech=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    g0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_rep: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
}

impl Common {
    fn load(self) -> Result<cli::config::Resolved> {
        let overrides = Overrides {
            preset: self.preset,
            output_dir: self.out,
            seed: self.seed,
            threads: self.threads,
            long_run: self.long_run,
            set: self.set,
            g0: self.g0,
            n_rep: self.n_rep,
            eta: self.eta,
            sigma: self.sigma,
        };
        cli::load(self.config.as_deref(), overrides)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { common, checkpoint } => cli::run(&common.load()?, RunOptions { checkpoint }),
        Command::Validate { common } => {
            let report = cli::validate(&common.load()?)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::VerifyOracle { common } => {
            let worst = cli::verify_oracle(&common.load()?)?;
            println!("max deviation {worst:e}");
            Ok(())
        }
        Command::PiSearch { common } => cli::pi_search(&common.load()?),
        Command::Semiclassical { common } => cli::semiclassical_tables(&common.load()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
