//! `simons-flow`: command-line driver.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "simons-flow",
    version,
    about = "Radial mean curvature flow near Simons' cone"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Output file (single-file commands) or directory.
    #[arg(long, global = true, visible_alias = "outdir")]
    pub out: Option<PathBuf>,
    /// Seed for randomized test functions.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the constants for dimension n as JSON.
    Params {
        #[arg(long)]
        n: u32,
        /// Highest eigenvalue index.
        #[arg(long, default_value_t = 6)]
        m: usize,
    },
    /// Solve the minimal profile and report its asymptotics.
    Minimal {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 1000.0)]
        r_max: f64,
    },
    /// Eigen table, Gram matrix and coercivity samples.
    Spectrum {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Number of random coercivity test functions.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Run the flow for a config file and export diagnostics.
    Flow {
        /// Flat `key = value` config; defaults to n = 5 when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Tune (a0, a1) and run the tuned flow.
    Shoot {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single matching time; staged tuning down to t_min when omitted.
        #[arg(long, allow_hyphen_values = true)]
        t1: Option<f64>,
    },
    /// Fit blow-up rates for a stored trajectory.
    Rates {
        /// Directory written by `flow` or `shoot`.
        #[arg(long)]
        trajectory: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let g = &cli.global;
    let res = match cli.command {
        Command::Params { n, m } => commands::params(g, n, m),
        Command::Minimal { n, k, r_max } => commands::minimal(g, n, k, r_max),
        Command::Spectrum { n, m, samples } => commands::spectrum(g, n, m, samples),
        Command::Flow { config } => commands::flow(g, config.as_deref()),
        Command::Shoot { config, t1 } => commands::shoot(g, config.as_deref(), t1),
        Command::Rates { trajectory } => commands::rates(g, &trajectory),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
