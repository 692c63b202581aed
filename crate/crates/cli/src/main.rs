use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spin_ratchet::TunnelingLaw;
use spin_ratchet_cli::{run, Command, Overrides, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "ratchet",
    version,
    about = "Swept-microwave DNP ratchet studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Analytic and bulk-model P(omega_r) profiles with omega_opt.
    Profile,
    /// Power-grid study: per-cell profiles, fits and omega_opt slopes.
    Regimes,
    /// Compartment buildup curves and small-time injection rates.
    Buildup,
    /// Exact sweep propagation with a Galton-board comparison.
    Propagate,
    /// Check a configuration and report warnings.
    Validate,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = ["paper", "standard"])]
    tunneling_law: Option<String>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let c = cli.common;
    let Some(config) = c.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    if let Some(n) = c.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let overrides = Overrides {
        out: c.out,
        seed: c.seed,
        tunneling_law: c
            .tunneling_law
            .map(|s| s.parse::<TunnelingLaw>().expect("validated by clap")),
    };
    let command = match cli.command {
        Sub::Profile => Command::Profile,
        Sub::Regimes => Command::Regimes,
        Sub::Buildup => Command::Buildup,
        Sub::Propagate => Command::Propagate,
        Sub::Validate => Command::Validate,
    };
    match run(command, &config, &overrides, RunOptions { svg: c.svg }) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
