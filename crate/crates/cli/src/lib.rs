//! Study orchestration behind the `ratchet` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

pub use commands::{run_regimes, RegimesStudy, RunOptions};
pub use config::StudyConfig;
pub use error::CliError;

use spin_ratchet::TunnelingLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Profile,
    Regimes,
    Buildup,
    Propagate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Profile => "profile",
            Self::Regimes => "regimes",
            Self::Buildup => "buildup",
            Self::Propagate => "propagate",
            Self::Validate => "validate",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tunneling_law: Option<TunnelingLaw>,
}

pub fn resolve(mut cfg: StudyConfig, o: &Overrides) -> Result<(StudyConfig, PathBuf), CliError> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(l) = o.tunneling_law {
        cfg.tunneling_law = l;
    }
    if let Some(d) = &o.out {
        cfg.output = Some(d.clone());
    }
    let dir = cfg.output.clone().ok_or_else(|| {
        CliError::Config("no output directory: pass --out or set `output`".into())
    })?;
    Ok((cfg, dir))
}

/// Runs `command` and writes its files and manifest under the resolved
/// output directory, which is returned.
pub fn run(
    command: Command,
    config: &Path,
    overrides: &Overrides,
    opts: RunOptions,
) -> Result<PathBuf, CliError> {
    let (cfg, dir) = resolve(config::load(config)?, overrides)?;
    run_config(command, &cfg, &dir, opts)
}

pub fn run_config(
    command: Command,
    cfg: &StudyConfig,
    dir: &Path,
    opts: RunOptions,
) -> Result<PathBuf, CliError> {
    let mut out = output::Output::create(dir)?;
    match command {
        Command::Profile => commands::cmd_profile(cfg, &mut out, opts)?,
        Command::Regimes => commands::cmd_regimes(cfg, &mut out, opts)?,
        Command::Buildup => commands::cmd_buildup(cfg, &mut out, opts)?,
        Command::Propagate => commands::cmd_propagate(cfg, &mut out, opts)?,
        Command::Validate => {
            commands::cmd_validate(cfg, &mut out)?;
        }
    }
    out.finish(command.name(), cfg)
}
