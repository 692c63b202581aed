//! Study configuration: TOML or JSON, resolved into model types.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spin_ratchet::optimize::logspace;
use spin_ratchet::{
    DriveConfig, HyperfineCoupling, PhysicalConstants, PropagationPolicy, RateChainParams,
    ResetMode, SpinSystem, SweepConfig, TunnelingLaw,
};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub tunneling_law: TunnelingLaw,
    #[serde(default = "default_reset")]
    pub reset: ResetMode,
    pub system: SystemBlock,
    pub drive: DriveBlock,
    pub sweep: SweepBlock,
    #[serde(default)]
    pub chain: ChainBlock,
    #[serde(default)]
    pub gaps: Option<GapBlock>,
    #[serde(default)]
    pub grids: GridBlock,
    #[serde(default)]
    pub profile: ProfileBlock,
    #[serde(default)]
    pub regimes: RegimesBlock,
    #[serde(default)]
    pub buildup: BuildupBlock,
    #[serde(default)]
    pub propagate: PropagateBlock,
}

fn default_reset() -> ResetMode {
    ResetMode::Full
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    /// Static field in tesla.
    pub b0: f64,
    #[serde(default)]
    pub gamma_e: Option<f64>,
    #[serde(default)]
    pub gamma_n: Option<f64>,
    #[serde(default)]
    pub delta_zfs: Option<f64>,
    #[serde(default)]
    pub exact_cap: Option<usize>,
    #[serde(default)]
    pub nuclei: Vec<NucleusBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NucleusBlock {
    pub a_par: f64,
    pub a_perp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveBlock {
    pub c_e: f64,
    pub c_r: f64,
    #[serde(default)]
    pub eta_e: Option<f64>,
    #[serde(default)]
    pub eta_r: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Sweep centre in Hz; defaults to the electron resonance.
    #[serde(default)]
    pub f0: Option<f64>,
    pub bandwidth: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    /// Omitted means no diffusion bottleneck.
    #[serde(default)]
    pub kappa_d: Option<f64>,
    #[serde(default)]
    pub t1n: Option<f64>,
    #[serde(default)]
    pub n_prox: Option<f64>,
    #[serde(default)]
    pub n_bulk: Option<f64>,
}

/// Explicit gaps for the analytic profile, bypassing the spin system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapBlock {
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default)]
    pub eta_e: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_r: Option<Vec<f64>>,
    #[serde(default)]
    pub omega_r: Option<Vec<f64>>,
    /// Alternative to `omega_r`: log-spaced points.
    #[serde(default)]
    pub omega_r_log: Option<LogGrid>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    #[serde(default = "yes")]
    pub bulk: bool,
}

impl Default for ProfileBlock {
    fn default() -> Self {
        Self { bulk: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimesBlock {
    /// Grid density of the direct ω_opt search.
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    #[serde(default = "yes")]
    pub fit: bool,
}

impl Default for RegimesBlock {
    fn default() -> Self {
        Self {
            per_decade: default_per_decade(),
            fit: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildupBlock {
    #[serde(default)]
    pub omega_r: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_thermal")]
    pub thermal_reference: f64,
}

impl Default for BuildupBlock {
    fn default() -> Self {
        Self {
            omega_r: None,
            duration: None,
            dt: None,
            window: default_window(),
            thermal_reference: default_thermal(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateBlock {
    #[serde(default)]
    pub omega_r: Option<f64>,
    #[serde(default)]
    pub steps_per_sweep: Option<usize>,
    #[serde(default)]
    pub sweeps: Option<usize>,
    #[serde(default)]
    pub initial_polarization: Vec<f64>,
    /// Monte Carlo trials for the Galton-board comparison; 0 skips it.
    #[serde(default)]
    pub galton_trials: usize,
}

fn yes() -> bool {
    true
}
fn default_per_decade() -> usize {
    64
}
fn default_window() -> f64 {
    0.6
}
fn default_thermal() -> f64 {
    spin_ratchet::buildup::DEFAULT_THERMAL_REFERENCE
}

/// Reads TOML, or JSON when the extension is `.json`.
pub fn load(path: &Path) -> Result<StudyConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse(text: &str, json: bool) -> Result<StudyConfig, CliError> {
    if json {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn bad<E: std::fmt::Display>(key: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{key}: {e}"))
}

fn nonempty<'a>(key: &str, v: &'a Option<Vec<f64>>) -> Result<&'a [f64], CliError> {
    match v {
        None => Err(CliError::Config(format!("missing required key `{key}`"))),
        Some(g) if g.is_empty() => Err(CliError::Config(format!("`{key}` must not be empty"))),
        Some(g) => {
            if let Some(x) = g.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(CliError::Config(format!(
                    "`{key}` contains invalid value {x}"
                )));
            }
            Ok(g)
        }
    }
}

impl StudyConfig {
    pub fn spin_system(&self) -> Result<SpinSystem, CliError> {
        let s = &self.system;
        let constants = PhysicalConstants::new(
            s.gamma_e.unwrap_or(PhysicalConstants::GAMMA_E),
            s.gamma_n.unwrap_or(PhysicalConstants::GAMMA_N_13C),
            s.delta_zfs.unwrap_or(PhysicalConstants::DELTA_ZFS),
        )
        .map_err(bad("system"))?;
        let nuclei = s
            .nuclei
            .iter()
            .enumerate()
            .map(|(i, n)| {
                HyperfineCoupling::new(n.a_par, n.a_perp)
                    .map_err(|e| CliError::Config(format!("system.nuclei[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sys = SpinSystem::new(constants, s.b0, nuclei).map_err(bad("system"))?;
        match s.exact_cap {
            Some(cap) => sys.with_exact_cap(cap).map_err(bad("system.exact_cap")),
            None => Ok(sys),
        }
    }

    /// Drive at the configured powers (zero where unset).
    pub fn drive(&self) -> Result<DriveConfig, CliError> {
        let d = &self.drive;
        DriveConfig::new(d.eta_e.unwrap_or(0.0), d.eta_r.unwrap_or(0.0), d.c_e, d.c_r)
            .map_err(bad("drive"))
    }

    /// Sweep at rate `omega_r`, centred on `f0` or the electron resonance.
    pub fn sweep(&self, system: &SpinSystem, omega_r: f64) -> Result<SweepConfig, CliError> {
        let f0 = self.sweep.f0.unwrap_or_else(|| system.electron_resonance());
        SweepConfig::new(f0, self.sweep.bandwidth, omega_r, self.sweep.duration)
            .map_err(bad("sweep"))
    }

    /// Chain template; rates are filled in per grid point.
    pub fn chain(&self) -> Result<RateChainParams, CliError> {
        let c = &self.chain;
        let n_prox = c.n_prox.unwrap_or(1.0);
        RateChainParams::new(
            0.0,
            0.0,
            c.kappa_d,
            c.t1n.unwrap_or(spin_ratchet::buildup::DEFAULT_T1N),
            n_prox,
            c.n_bulk
                .unwrap_or(n_prox * spin_ratchet::buildup::DEFAULT_POOL_RATIO),
            1.0,
        )
        .map_err(bad("chain"))
    }

    pub fn omega_grid(&self) -> Result<Vec<f64>, CliError> {
        if let Some(g) = &self.grids.omega_r_log {
            if self.grids.omega_r.is_some() {
                return Err(CliError::Config(
                    "give only one of `grids.omega_r` and `grids.omega_r_log`".into(),
                ));
            }
            if !(g.min > 0.0 && g.max > g.min && g.points >= 2) {
                return Err(CliError::Config(
                    "`grids.omega_r_log` needs 0 < min < max and points >= 2".into(),
                ));
            }
            return Ok(logspace(g.min, g.max, g.points));
        }
        let g = nonempty("grids.omega_r", &self.grids.omega_r)?;
        if g.windows(2).any(|w| w[1] <= w[0]) || g[0] <= 0.0 {
            return Err(CliError::Config(
                "`grids.omega_r` must be positive and strictly increasing".into(),
            ));
        }
        Ok(g.to_vec())
    }

    pub fn eta_e_grid(&self) -> Result<Vec<f64>, CliError> {
        nonempty("grids.eta_e", &self.grids.eta_e).map(<[f64]>::to_vec)
    }

    pub fn eta_r_grid(&self) -> Result<Vec<f64>, CliError> {
        nonempty("grids.eta_r", &self.grids.eta_r).map(<[f64]>::to_vec)
    }

    pub fn propagation_policy(&self, steps: usize) -> Result<PropagationPolicy, CliError> {
        PropagationPolicy::new(steps, self.reset, self.propagate.sweeps.unwrap_or(1))
            .and_then(|p| p.with_initial_polarization(self.propagate.initial_polarization.clone()))
            .map_err(bad("propagate"))
    }
}
