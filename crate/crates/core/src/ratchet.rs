//! Closed-form spin-ratchet model.
//!
//! Probabilities follow the two-gap cascade of a single nucleus: T₁ and T₂
//! are the tunneling (diabatic passage) probabilities at the large gap ε₁ and
//! the small gap ε₂ respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::golden_section_max;
use crate::propagator::lz_reference_probability;

/// Default ω_r search window for [`find_omega_opt`] (Hz).
pub const DEFAULT_OMEGA_WINDOW: (f64, f64) = (1.0, 1e6);
/// Coarse-grid density for the optimum search.
pub const GRID_POINTS_PER_DECADE: usize = 256;

/// Which diabatic-passage law maps a gap to a tunneling probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunnelingLaw {
    /// exp(−ε²/(ω_r·B)), the model's own form.
    #[default]
    Paper,
    /// Textbook Landau-Zener passage, see [`lz_reference_probability`].
    Standard,
}

impl TunnelingLaw {
    pub fn probability(self, eps: f64, omega_r: f64, bandwidth: f64) -> Result<f64> {
        match self {
            Self::Paper => tunneling_probability(eps, omega_r, bandwidth),
            Self::Standard => {
                check_rate(omega_r, bandwidth)?;
                Ok(lz_reference_probability(eps, bandwidth * omega_r))
            }
        }
    }
}

impl std::str::FromStr for TunnelingLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "standard" => Ok(Self::Standard),
            other => Err(Error::InvalidParameter(format!(
                "unknown tunneling law {other:?} (expected paper or standard)"
            ))),
        }
    }
}

fn check_rate(omega_r: f64, bandwidth: f64) -> Result<()> {
    if !(omega_r > 0.0 && omega_r.is_finite()) {
        return Err(Error::Domain(format!(
            "sweep rate must be positive, got {omega_r}"
        )));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(())
}

/// T(ω_r) = exp(−ε²/(ω_r·B)).
pub fn tunneling_probability(eps: f64, omega_r: f64, bandwidth: f64) -> Result<f64> {
    check_rate(omega_r, bandwidth)?;
    Ok((-(eps * eps) / (omega_r * bandwidth)).exp())
}

/// Scalar inputs of the buildup-rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRatchet")]
pub struct RatchetParams {
    kappa_e: f64,
    eps1: f64,
    eps2: f64,
    bandwidth: f64,
    duration: f64,
}

#[derive(Deserialize)]
struct RawRatchet {
    kappa_e: f64,
    eps1: f64,
    eps2: f64,
    bandwidth: f64,
    duration: f64,
}

impl TryFrom<RawRatchet> for RatchetParams {
    type Error = Error;
    fn try_from(r: RawRatchet) -> Result<Self> {
        Self::new(r.kappa_e, r.eps1, r.eps2, r.bandwidth, r.duration)
    }
}

impl RatchetParams {
    pub fn new(kappa_e: f64, eps1: f64, eps2: f64, bandwidth: f64, duration: f64) -> Result<Self> {
        for (name, v) in [
            ("kappa_e", kappa_e),
            ("eps1", eps1),
            ("eps2", eps2),
            ("duration", duration),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            kappa_e,
            eps1,
            eps2,
            bandwidth,
            duration,
        })
    }

    pub fn kappa_e(&self) -> f64 {
        self.kappa_e
    }
    pub fn eps1(&self) -> f64 {
        self.eps1
    }
    pub fn eps2(&self) -> f64 {
        self.eps2
    }
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// The small gap should not exceed the large one.
    pub fn gap_order_warning(&self) -> Option<String> {
        (self.eps2 > self.eps1).then(|| {
            format!(
                "eps2 = {} Hz exceeds eps1 = {} Hz; the gap roles look swapped",
                self.eps2, self.eps1
            )
        })
    }

    pub fn with_kappa_e(&self, kappa_e: f64) -> Result<Self> {
        Self::new(kappa_e, self.eps1, self.eps2, self.bandwidth, self.duration)
    }

    pub fn with_gaps(&self, eps1: f64, eps2: f64) -> Result<Self> {
        Self::new(self.kappa_e, eps1, eps2, self.bandwidth, self.duration)
    }

    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.kappa_e, self.eps1, self.eps2, self.bandwidth, duration)
    }
}

/// Per-sweep nuclear transition probabilities, index 0 = ↓, 1 = ↑.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepTransitionMatrix {
    p: [[f64; 2]; 2],
}

impl SweepTransitionMatrix {
    /// P(from → to).
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.p[from][to]
    }
    pub fn down_down(&self) -> f64 {
        self.p[0][0]
    }
    pub fn down_up(&self) -> f64 {
        self.p[0][1]
    }
    pub fn up_down(&self) -> f64 {
        self.p[1][0]
    }
    pub fn up_up(&self) -> f64 {
        self.p[1][1]
    }
    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.p
    }

    /// [P(↓→↓) + P(↑→↓)] − [P(↓→↑) + P(↑→↑)].
    pub fn column_difference(&self) -> f64 {
        (self.p[0][0] + self.p[1][0]) - (self.p[0][1] + self.p[1][1])
    }
}

fn check_prob(name: &str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {t} is not a probability")))
    }
}

/// The four per-sweep probabilities of the two-gap cascade:
///
/// P(↓→↓) = (1−T₂) + T₂T₁, P(↓→↑) = T₂(1−T₁),
/// P(↑→↓) = T₂(1−T₁) + 2T₁(1−T₁)(1−T₂),
/// P(↑→↑) = T₁T₂ + T₁²(1−T₂) + (1−T₁)²(1−T₂).
pub fn sweep_transition_matrix(t1: f64, t2: f64) -> Result<SweepTransitionMatrix> {
    check_prob("t1", t1)?;
    check_prob("t2", t2)?;
    let (u1, u2) = (1.0 - t1, 1.0 - t2);
    Ok(SweepTransitionMatrix {
        p: [
            [u2 + t2 * t1, t2 * u1],
            [
                t2 * u1 + 2.0 * t1 * u1 * u2,
                t1 * t2 + t1 * t1 * u2 + u1 * u1 * u2,
            ],
        ],
    })
}

/// Net population moved per sweep: (1−T₂)·[1 − (2T₁ − 1)²].
pub fn per_sweep_polarization(t1: f64, t2: f64) -> f64 {
    // Same as 1 − (2T₁ − 1)², without the cancellation when T₁ is tiny.
    4.0 * t1 * (1.0 - t1) * (1.0 - t2)
}

/// Ṗ(ω_r) = ω_r·[1 − exp(−κ_e/ω_r)]·(1−T₂)·[1 − (2T₁ − 1)²].
pub fn buildup_rate(omega_r: f64, params: &RatchetParams) -> f64 {
    buildup_rate_with(omega_r, params, TunnelingLaw::Paper)
}

pub fn buildup_rate_with(omega_r: f64, params: &RatchetParams, law: TunnelingLaw) -> f64 {
    if !(omega_r > 0.0) || !omega_r.is_finite() {
        return 0.0;
    }
    let b = params.bandwidth;
    let t1 = law.probability(params.eps1, omega_r, b).unwrap_or(1.0);
    let t2 = law.probability(params.eps2, omega_r, b).unwrap_or(1.0);
    let pump = -(-params.kappa_e / omega_r).exp_m1();
    omega_r * pump * per_sweep_polarization(t1, t2)
}

/// Total polarization after T·ω_r sweeps: Ṗ(ω_r)·T.
pub fn total_polarization(params: &RatchetParams, omega_r: f64) -> f64 {
    total_polarization_with(params, omega_r, TunnelingLaw::Paper)
}

pub fn total_polarization_with(params: &RatchetParams, omega_r: f64, law: TunnelingLaw) -> f64 {
    buildup_rate_with(omega_r, params, law) * params.duration
}

/// Global maximiser of Ṗ on `window`: log grid at
/// [`GRID_POINTS_PER_DECADE`] then golden-section refinement in ln ω_r.
pub fn find_omega_opt(params: &RatchetParams, window: (f64, f64)) -> Result<f64> {
    find_omega_opt_with(params, window, TunnelingLaw::Paper)
}

pub fn find_omega_opt_with(
    params: &RatchetParams,
    window: (f64, f64),
    law: TunnelingLaw,
) -> Result<f64> {
    maximize_log(|w| buildup_rate_with(w, params, law), window)
}

/// Shared maximiser for positive-axis curves: log grid plus golden section.
pub fn maximize_log<F: Fn(f64) -> f64>(f: F, window: (f64, f64)) -> Result<f64> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "search window [{lo}, {hi}] must be positive and increasing"
        )));
    }
    let decades = (hi / lo).log10();
    let n = ((decades * GRID_POINTS_PER_DECADE as f64).ceil() as usize).max(2) + 1;
    let (la, lb) = (lo.ln(), hi.ln());
    let x = |i: usize| la + (lb - la) * i as f64 / (n - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..n {
        let v = f(x(i).exp());
        if v > best.1 {
            best = (i, v);
        }
    }
    let i = best.0;
    if i == 0 || i == n - 1 {
        return Err(Error::NoInteriorMaximum { at: x(i).exp() });
    }
    let (lx, _) = golden_section_max(|l| f(l.exp()), x(i - 1), x(i + 1), 1e-13, 300);
    Ok(lx.exp())
}
