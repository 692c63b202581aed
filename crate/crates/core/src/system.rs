//! Domain types for the central-spin system: physical constants, hyperfine
//! couplings, the microwave/optical drive and the frequency sweep.
//!
//! Every frequency is stored in ordinary-frequency units (Hz). Angular
//! quantities are converted with [`to_angular`] / [`from_angular`] at the
//! boundary of the few routines that need them.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of nuclei handled by exact propagation
/// (Hilbert-space dimension 2·2⁶ = 128).
pub const DEFAULT_EXACT_CAP: usize = 6;

/// Hz → rad/s.
pub fn to_angular(f_hz: f64) -> f64 {
    TAU * f_hz
}

/// rad/s → Hz.
pub fn from_angular(w_rad: f64) -> f64 {
    w_rad / TAU
}

fn finite(name: &str, v: f64) -> std::result::Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be finite, got {v}"))
    }
}

/// Gyromagnetic ratios and the NV zero-field splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstants")]
pub struct PhysicalConstants {
    gamma_e: f64,
    gamma_n: f64,
    delta_zfs: f64,
}

#[derive(Deserialize)]
struct RawConstants {
    #[serde(default = "default_gamma_e")]
    gamma_e: f64,
    #[serde(default = "default_gamma_n")]
    gamma_n: f64,
    #[serde(default = "default_delta")]
    delta_zfs: f64,
}

fn default_gamma_e() -> f64 {
    PhysicalConstants::GAMMA_E
}
fn default_gamma_n() -> f64 {
    PhysicalConstants::GAMMA_N_13C
}
fn default_delta() -> f64 {
    PhysicalConstants::DELTA_ZFS
}

impl TryFrom<RawConstants> for PhysicalConstants {
    type Error = Error;
    fn try_from(r: RawConstants) -> Result<Self> {
        Self::new(r.gamma_e, r.gamma_n, r.delta_zfs)
    }
}

impl PhysicalConstants {
    /// Electron gyromagnetic ratio, Hz/T.
    pub const GAMMA_E: f64 = 28.024e9;
    /// ¹³C gyromagnetic ratio, Hz/T.
    pub const GAMMA_N_13C: f64 = 10.705e6;
    /// NV zero-field splitting, Hz.
    pub const DELTA_ZFS: f64 = 2.87e9;

    pub fn new(gamma_e: f64, gamma_n: f64, delta_zfs: f64) -> Result<Self> {
        let check = || -> std::result::Result<(), String> {
            finite("gamma_e", gamma_e)?;
            finite("gamma_n", gamma_n)?;
            finite("delta_zfs", delta_zfs)?;
            if gamma_e <= 0.0 || gamma_n <= 0.0 {
                return Err("gyromagnetic ratios must be positive".into());
            }
            if gamma_e / gamma_n <= 2000.0 {
                return Err(format!(
                    "gamma_e/gamma_n must exceed 2000, got {}",
                    gamma_e / gamma_n
                ));
            }
            if delta_zfs <= 0.0 {
                return Err("delta_zfs must be positive".into());
            }
            Ok(())
        };
        check().map_err(Error::InvalidSystem)?;
        Ok(Self {
            gamma_e,
            gamma_n,
            delta_zfs,
        })
    }

    pub fn gamma_e(&self) -> f64 {
        self.gamma_e
    }
    pub fn gamma_n(&self) -> f64 {
        self.gamma_n
    }
    pub fn delta_zfs(&self) -> f64 {
        self.delta_zfs
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gamma_e: Self::GAMMA_E,
            gamma_n: Self::GAMMA_N_13C,
            delta_zfs: Self::DELTA_ZFS,
        }
    }
}

/// Electron–nucleus hyperfine coupling split along and across the NV axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperfine")]
pub struct HyperfineCoupling {
    a_par: f64,
    a_perp: f64,
}

#[derive(Deserialize)]
struct RawHyperfine {
    a_par: f64,
    a_perp: f64,
}

impl TryFrom<RawHyperfine> for HyperfineCoupling {
    type Error = Error;
    fn try_from(r: RawHyperfine) -> Result<Self> {
        Self::new(r.a_par, r.a_perp)
    }
}

impl HyperfineCoupling {
    pub fn new(a_par: f64, a_perp: f64) -> Result<Self> {
        finite("a_par", a_par).map_err(Error::InvalidSystem)?;
        finite("a_perp", a_perp).map_err(Error::InvalidSystem)?;
        if a_perp < 0.0 {
            return Err(Error::InvalidSystem(format!(
                "a_perp must be non-negative, got {a_perp}"
            )));
        }
        Ok(Self { a_par, a_perp })
    }

    /// Parallel component A∥ (Hz, signed).
    pub fn a_par(&self) -> f64 {
        self.a_par
    }
    /// Perpendicular component A⊥ (Hz, ≥ 0).
    pub fn a_perp(&self) -> f64 {
        self.a_perp
    }
}

/// An NV electron coupled to an ordered list of ¹³C nuclei at field `b0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem")]
pub struct SpinSystem {
    constants: PhysicalConstants,
    b0: f64,
    nuclei: Vec<HyperfineCoupling>,
    exact_cap: usize,
}

#[derive(Deserialize)]
struct RawSystem {
    #[serde(default)]
    constants: PhysicalConstants,
    b0: f64,
    #[serde(default)]
    nuclei: Vec<HyperfineCoupling>,
    #[serde(default = "default_cap")]
    exact_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_EXACT_CAP
}

impl TryFrom<RawSystem> for SpinSystem {
    type Error = Error;
    fn try_from(r: RawSystem) -> Result<Self> {
        Self::new(r.constants, r.b0, r.nuclei)?.with_exact_cap(r.exact_cap)
    }
}

impl SpinSystem {
    pub fn new(
        constants: PhysicalConstants,
        b0: f64,
        nuclei: Vec<HyperfineCoupling>,
    ) -> Result<Self> {
        if !(b0.is_finite() && b0 > 0.0) {
            return Err(Error::InvalidSystem(format!(
                "b0 must be positive and finite, got {b0}"
            )));
        }
        Ok(Self {
            constants,
            b0,
            nuclei,
            exact_cap: DEFAULT_EXACT_CAP,
        })
    }

    pub fn with_exact_cap(mut self, cap: usize) -> Result<Self> {
        if cap > 12 {
            return Err(Error::InvalidSystem(format!(
                "exact-propagation cap {cap} is beyond what dense propagation can hold"
            )));
        }
        self.exact_cap = cap;
        Ok(self)
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }
    pub fn b0(&self) -> f64 {
        self.b0
    }
    pub fn nuclei(&self) -> &[HyperfineCoupling] {
        &self.nuclei
    }
    pub fn n_nuclei(&self) -> usize {
        self.nuclei.len()
    }
    pub fn exact_cap(&self) -> usize {
        self.exact_cap
    }

    /// Bare nuclear Larmor frequency ω_n = γ_n·B₀ (Hz).
    pub fn omega_n(&self) -> f64 {
        self.constants.gamma_n * self.b0
    }

    /// Electron Zeeman frequency γ_e·B₀ (Hz).
    pub fn electron_zeeman(&self) -> f64 {
        self.constants.gamma_e * self.b0
    }

    /// Frequency of the driven m_s = 0 ↔ +1 resonance, Δ − γ_e·B₀ (Hz).
    pub fn electron_resonance(&self) -> f64 {
        self.constants.delta_zfs - self.electron_zeeman()
    }

    /// Hilbert-space dimension of the {0, +1} electron ⊗ N nuclei space.
    pub fn dim(&self) -> usize {
        2usize << self.nuclei.len()
    }
}

/// Optical and microwave powers with their conversion factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDrive")]
pub struct DriveConfig {
    eta_e: f64,
    eta_r: f64,
    c_e: f64,
    c_r: f64,
}

#[derive(Deserialize)]
struct RawDrive {
    eta_e: f64,
    eta_r: f64,
    c_e: f64,
    c_r: f64,
}

impl TryFrom<RawDrive> for DriveConfig {
    type Error = Error;
    fn try_from(r: RawDrive) -> Result<Self> {
        Self::new(r.eta_e, r.eta_r, r.c_e, r.c_r)
    }
}

impl DriveConfig {
    pub fn new(eta_e: f64, eta_r: f64, c_e: f64, c_r: f64) -> Result<Self> {
        for (name, v) in [
            ("eta_e", eta_e),
            ("eta_r", eta_r),
            ("c_e", c_e),
            ("c_r", c_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidDrive(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self {
            eta_e,
            eta_r,
            c_e,
            c_r,
        })
    }

    /// Drive with both conversion factors set to 1, so that the powers are
    /// directly the pumping rate (1/s) and the Rabi frequency (Hz).
    pub fn from_rates(kappa_e: f64, rabi: f64) -> Result<Self> {
        Self::new(kappa_e, rabi, 1.0, 1.0)
    }

    pub fn eta_e(&self) -> f64 {
        self.eta_e
    }
    pub fn eta_r(&self) -> f64 {
        self.eta_r
    }
    pub fn c_e(&self) -> f64 {
        self.c_e
    }
    pub fn c_r(&self) -> f64 {
        self.c_r
    }

    /// Optical pumping rate κ_e = c_e·η_e (1/s).
    pub fn kappa_e(&self) -> f64 {
        self.c_e * self.eta_e
    }

    /// Electron Rabi frequency Ω_e = c_r·η_r (Hz).
    pub fn rabi(&self) -> f64 {
        self.c_r * self.eta_r
    }

    pub fn with_powers(&self, eta_e: f64, eta_r: f64) -> Result<Self> {
        Self::new(eta_e, eta_r, self.c_e, self.c_r)
    }
}

/// A linear chirp repeated at rate `omega_r` for a total time `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSweep")]
pub struct SweepConfig {
    f0: f64,
    bandwidth: f64,
    omega_r: f64,
    duration: f64,
}

#[derive(Deserialize)]
struct RawSweep {
    f0: f64,
    bandwidth: f64,
    omega_r: f64,
    #[serde(default)]
    duration: f64,
}

impl TryFrom<RawSweep> for SweepConfig {
    type Error = Error;
    fn try_from(r: RawSweep) -> Result<Self> {
        Self::new(r.f0, r.bandwidth, r.omega_r, r.duration)
    }
}

impl SweepConfig {
    pub fn new(f0: f64, bandwidth: f64, omega_r: f64, duration: f64) -> Result<Self> {
        if !f0.is_finite() {
            return Err(Error::InvalidSweep(format!("f0 must be finite, got {f0}")));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidSweep(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(omega_r.is_finite() && omega_r > 0.0) {
            return Err(Error::InvalidSweep(format!(
                "sweep rate must be positive, got {omega_r}"
            )));
        }
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::InvalidSweep(format!(
                "duration must be non-negative, got {duration}"
            )));
        }
        Ok(Self {
            f0,
            bandwidth,
            omega_r,
            duration,
        })
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn with_omega_r(&self, omega_r: f64) -> Result<Self> {
        Self::new(self.f0, self.bandwidth, omega_r, self.duration)
    }

    /// Lower and upper edge of the swept window.
    pub fn window(&self) -> (f64, f64) {
        (
            self.f0 - self.bandwidth / 2.0,
            self.f0 + self.bandwidth / 2.0,
        )
    }

    /// Length of a single sweep, 1/ω_r.
    pub fn period(&self) -> f64 {
        1.0 / self.omega_r
    }

    /// Chirp rate dω_MW/dt = B·ω_r (Hz/s).
    pub fn velocity(&self) -> f64 {
        self.bandwidth * self.omega_r
    }

    /// Instantaneous frequency B·ω_r·t + f0 − B/2 for t within one sweep.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        self.bandwidth * self.omega_r * t + self.f0 - self.bandwidth / 2.0
    }

    /// Number of sweeps T·ω_r.
    pub fn sweep_count(&self) -> f64 {
        self.duration * self.omega_r
    }
}

/// Something worth knowing about an otherwise valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationWarning {
    /// B ≤ 10·ε₁: the anti-crossings are not narrow compared with the sweep.
    AdiabaticApproximationSuspect { bandwidth: f64, eps1: f64 },
    /// More nuclei than exact propagation accepts.
    ExceedsExactCap { nuclei: usize, cap: usize },
    /// The electron resonance lies outside the swept window, so no
    /// anti-crossing is traversed.
    ResonanceOutsideWindow { resonance: f64, lo: f64, hi: f64 },
    /// A⊥ = 0 for this nucleus: its conditional gap vanishes.
    VanishingConditionalGap { nucleus: usize },
}

impl std::fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AdiabaticApproximationSuspect { bandwidth, eps1 } => write!(
                f,
                "adiabatic-approximation suspect: bandwidth {bandwidth} Hz is not above 10 x eps1 = {} Hz",
                10.0 * eps1
            ),
            Self::ExceedsExactCap { nuclei, cap } => {
                write!(f, "{nuclei} nuclei exceed the exact-propagation cap {cap}")
            }
            Self::ResonanceOutsideWindow { resonance, lo, hi } => write!(
                f,
                "electron resonance {resonance} Hz lies outside the sweep window [{lo}, {hi}] Hz"
            ),
            Self::VanishingConditionalGap { nucleus } => {
                write!(f, "nucleus {nucleus} has A_perp = 0: no conditional gap")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub warnings: Vec<ValidationWarning>,
}

impl ValidationReport {
    pub fn has_warning(&self, pred: impl Fn(&ValidationWarning) -> bool) -> bool {
        self.warnings.iter().any(pred)
    }
}

/// Cross-checks a constructed configuration.
///
/// Individual field constraints are already enforced by the constructors, so
/// this only reports on combinations: whether the large gap ε₁ ≈ Ω_e is narrow
/// compared with the bandwidth, whether exact propagation can handle N, and
/// whether the sweep actually crosses the electron resonance.
pub fn validate_system(
    system: &SpinSystem,
    drive: &DriveConfig,
    sweep: &SweepConfig,
) -> ValidationReport {
    let mut warnings = Vec::new();
    let eps1 = drive.rabi();
    if sweep.bandwidth() <= 10.0 * eps1 {
        warnings.push(ValidationWarning::AdiabaticApproximationSuspect {
            bandwidth: sweep.bandwidth(),
            eps1,
        });
    }
    if system.n_nuclei() > system.exact_cap() {
        warnings.push(ValidationWarning::ExceedsExactCap {
            nuclei: system.n_nuclei(),
            cap: system.exact_cap(),
        });
    }
    let (lo, hi) = sweep.window();
    let res = system.electron_resonance();
    if res < lo || res > hi {
        warnings.push(ValidationWarning::ResonanceOutsideWindow {
            resonance: res,
            lo,
            hi,
        });
    }
    for (j, n) in system.nuclei().iter().enumerate() {
        if n.a_perp() == 0.0 {
            warnings.push(ValidationWarning::VanishingConditionalGap { nucleus: j });
        }
    }
    ValidationReport {
        passed: true,
        warnings,
    }
}
