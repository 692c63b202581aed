//! Electron → proximal shell → bulk compartment model.
//!
//! dP_p/dt = Γ·(P_e^ss − P_p) − κ_d·(P_p − P_b) − P_p/T₁ₙ
//! dP_b/dt = κ_d·(n_p/n_b)·(P_p − P_b) − P_b/T₁ₙ
//!
//! with P_e^ss = 1 − exp(−κ_e/ω_r). Without a diffusion bottleneck
//! (κ_d = ∞) the two pools share one polarization.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::conditional_gaps;
use crate::error::{Error, Result};
use crate::fit::{DnpProfile, ProfileMeta};
use crate::optimize::golden_section_max;
use crate::ratchet::{per_sweep_polarization, TunnelingLaw};
use crate::system::{DriveConfig, SpinSystem, SweepConfig};

/// Default nuclear T₁ (s).
pub const DEFAULT_T1N: f64 = 300.0;
/// Default n_bulk / n_prox.
pub const DEFAULT_POOL_RATIO: f64 = 100.0;
/// Default reference thermal polarization for %/s reporting.
pub const DEFAULT_THERMAL_REFERENCE: f64 = 1e-5;

/// 1 − exp(−t·κ_e).
pub fn electron_polarization(t: f64, kappa_e: f64) -> f64 {
    -(-t * kappa_e).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain")]
pub struct RateChainParams {
    kappa_e: f64,
    inj_rate: f64,
    /// `None` is the κ_d → ∞ limit.
    kappa_d: Option<f64>,
    t1n: f64,
    n_prox: f64,
    n_bulk: f64,
    omega_r: f64,
}

#[derive(Deserialize)]
struct RawChain {
    kappa_e: f64,
    #[serde(default)]
    inj_rate: f64,
    #[serde(default)]
    kappa_d: Option<f64>,
    #[serde(default = "default_t1n")]
    t1n: f64,
    #[serde(default = "one")]
    n_prox: f64,
    #[serde(default = "default_bulk")]
    n_bulk: f64,
    omega_r: f64,
}

fn default_t1n() -> f64 {
    DEFAULT_T1N
}
fn one() -> f64 {
    1.0
}
fn default_bulk() -> f64 {
    DEFAULT_POOL_RATIO
}

impl TryFrom<RawChain> for RateChainParams {
    type Error = Error;
    fn try_from(r: RawChain) -> Result<Self> {
        Self::new(
            r.kappa_e, r.inj_rate, r.kappa_d, r.t1n, r.n_prox, r.n_bulk, r.omega_r,
        )
    }
}

impl RateChainParams {
    pub fn new(
        kappa_e: f64,
        inj_rate: f64,
        kappa_d: Option<f64>,
        t1n: f64,
        n_prox: f64,
        n_bulk: f64,
        omega_r: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("kappa_e", kappa_e),
            ("inj_rate", inj_rate),
            ("n_prox", n_prox),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(k) = kappa_d {
            if !(k.is_finite() && k >= 0.0) {
                return bad(format!("kappa_d must be finite and non-negative, got {k}"));
            }
        }
        if !(t1n > 0.0) {
            return bad(format!("t1n must be positive, got {t1n}"));
        }
        if !(n_bulk.is_finite() && n_bulk >= n_prox && n_bulk > 0.0) {
            return bad(format!(
                "n_bulk = {n_bulk} must be positive and at least n_prox = {n_prox}"
            ));
        }
        if !(omega_r.is_finite() && omega_r > 0.0) {
            return bad(format!("omega_r must be positive, got {omega_r}"));
        }
        Ok(Self {
            kappa_e,
            inj_rate,
            kappa_d,
            t1n,
            n_prox,
            n_bulk,
            omega_r,
        })
    }

    pub fn kappa_e(&self) -> f64 {
        self.kappa_e
    }
    pub fn inj_rate(&self) -> f64 {
        self.inj_rate
    }
    pub fn kappa_d(&self) -> Option<f64> {
        self.kappa_d
    }
    pub fn t1n(&self) -> f64 {
        self.t1n
    }
    pub fn n_prox(&self) -> f64 {
        self.n_prox
    }
    pub fn n_bulk(&self) -> f64 {
        self.n_bulk
    }
    pub fn omega_r(&self) -> f64 {
        self.omega_r
    }

    pub fn with_rates(&self, kappa_e: f64, inj_rate: f64, omega_r: f64) -> Result<Self> {
        Self::new(
            kappa_e,
            inj_rate,
            self.kappa_d,
            self.t1n,
            self.n_prox,
            self.n_bulk,
            omega_r,
        )
    }

    /// Electron polarization reached within one sweep, 1 − exp(−κ_e/ω_r).
    pub fn pe_steady(&self) -> f64 {
        electron_polarization(1.0 / self.omega_r, self.kappa_e)
    }

    /// Largest step allowed: min(1/Γ, 1/κ_d, T₁ₙ)/10, ignoring zero rates.
    pub fn max_step(&self) -> f64 {
        let mut m = self.t1n;
        if self.inj_rate > 0.0 {
            m = m.min(1.0 / self.inj_rate);
        }
        if let Some(k) = self.kappa_d.filter(|k| *k > 0.0) {
            m = m.min(1.0 / k);
        }
        m / 10.0
    }
}

/// Compartment polarizations on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildupSeries {
    pub time: Vec<f64>,
    pub electron: Vec<f64>,
    pub proximal: Vec<f64>,
    pub bulk: Vec<f64>,
}

impl BuildupSeries {
    pub fn len(&self) -> usize {
        self.time.len()
    }
    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Writes `time_s,electron,proximal,bulk`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time_s", "electron", "proximal", "bulk"])?;
        for i in 0..self.len() {
            wr.write_record([
                format!("{:.9e}", self.time[i]),
                format!("{:.12e}", self.electron[i]),
                format!("{:.12e}", self.proximal[i]),
                format!("{:.12e}", self.bulk[i]),
            ])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

fn derivative(p: &RateChainParams, pe: f64, x: [f64; 2]) -> [f64; 2] {
    let relax = if p.t1n.is_finite() { 1.0 / p.t1n } else { 0.0 };
    match p.kappa_d {
        Some(kd) => [
            p.inj_rate * (pe - x[0]) - kd * (x[0] - x[1]) - x[0] * relax,
            kd * (p.n_prox / p.n_bulk) * (x[0] - x[1]) - x[1] * relax,
        ],
        None => {
            let w = p.n_prox / (p.n_prox + p.n_bulk);
            let d = w * p.inj_rate * (pe - x[0]) - x[0] * relax;
            [d, d]
        }
    }
}

fn rk4(p: &RateChainParams, pe: f64, x: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], k: [f64; 2], s: f64| [a[0] + s * k[0], a[1] + s * k[1]];
    let k1 = derivative(p, pe, x);
    let k2 = derivative(p, pe, add(x, k1, h / 2.0));
    let k3 = derivative(p, pe, add(x, k2, h / 2.0));
    let k4 = derivative(p, pe, add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn check_step(params: &RateChainParams, duration: f64, dt: f64) -> Result<usize> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::StepTooCoarse(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let limit = params.max_step();
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooCoarse(format!(
            "dt = {dt} s exceeds min(1/inj_rate, 1/kappa_d, t1n)/10 = {limit} s"
        )));
    }
    Ok(((duration / dt).ceil() as usize).max(1))
}

/// Integrates the chain from zero polarization with 4th-order Runge-Kutta.
///
/// The step actually used is duration/⌈duration/dt⌉ so that the grid ends on
/// `duration`.
pub fn simulate_buildup(params: &RateChainParams, duration: f64, dt: f64) -> Result<BuildupSeries> {
    let steps = check_step(params, duration, dt)?;
    let h = duration / steps as f64;
    let pe = params.pe_steady();
    let mut s = BuildupSeries {
        time: Vec::with_capacity(steps + 1),
        electron: Vec::with_capacity(steps + 1),
        proximal: Vec::with_capacity(steps + 1),
        bulk: Vec::with_capacity(steps + 1),
    };
    let mut x = [0.0, 0.0];
    for k in 0..=steps {
        let t = h * k as f64;
        s.time.push(t);
        s.electron.push(electron_polarization(t, params.kappa_e));
        s.proximal.push(x[0]);
        s.bulk.push(x[1]);
        if k < steps {
            x = rk4(params, pe, x, h);
        }
    }
    Ok(s)
}

/// Bulk polarization at `duration` without storing the trajectory, using the
/// largest admissible step.
pub fn final_bulk(params: &RateChainParams, duration: f64) -> Result<f64> {
    let steps = check_step(params, duration, params.max_step())?;
    let h = duration / steps as f64;
    let pe = params.pe_steady();
    let mut x = [0.0, 0.0];
    for _ in 0..steps {
        x = rk4(params, pe, x, h);
    }
    Ok(x[1])
}

/// Least-squares slope of P_b(t) over t ≤ `window`.
pub fn small_time_injection_rate(series: &BuildupSeries, window: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .time
        .iter()
        .zip(&series.bulk)
        .filter(|(t, _)| **t <= window * (1.0 + 1e-12))
        .map(|(t, p)| (*t, *p))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientSamples {
            required: 5,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mp = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mp)).sum();
    Ok(sxy / sxx)
}

/// A slope in polarization/s expressed as percent of `reference` per second.
pub fn percent_per_second(slope: f64, reference: f64) -> f64 {
    100.0 * slope / reference
}

/// Per-second proximal injection rate Γ(ω_r) = ω_r·(1−T₂)·[1 − (2T₁ − 1)²].
pub fn injection_rate(
    eps1: f64,
    eps2: f64,
    omega_r: f64,
    bandwidth: f64,
    law: TunnelingLaw,
) -> Result<f64> {
    let t1 = law.probability(eps1, omega_r, bandwidth)?;
    let t2 = law.probability(eps2, omega_r, bandwidth)?;
    Ok(omega_r * per_sweep_polarization(t1, t2))
}

/// Large and small gap of the first nucleus: the nuclear-state conserving and
/// flipping crossings.
pub fn chain_gaps(system: &SpinSystem, drive: &DriveConfig) -> Result<(f64, f64)> {
    if system.n_nuclei() == 0 {
        return Err(Error::InvalidParameter(
            "bulk profile needs at least one nucleus to set the gaps".into(),
        ));
    }
    conditional_gaps(system, drive, 0)
}

/// Everything needed to evaluate P_b(duration) as a function of ω_r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BulkModel {
    pub eps1: f64,
    pub eps2: f64,
    pub kappa_e: f64,
    pub bandwidth: f64,
    /// Supplies κ_d, T₁ₙ and the pool sizes.
    pub chain: RateChainParams,
    pub duration: f64,
    pub law: TunnelingLaw,
}

impl BulkModel {
    /// Gaps from the first nucleus of `system`, κ_e from `drive`.
    pub fn from_system(
        system: &SpinSystem,
        drive: &DriveConfig,
        bandwidth: f64,
        chain: &RateChainParams,
        duration: f64,
        law: TunnelingLaw,
    ) -> Result<Self> {
        let (eps1, eps2) = chain_gaps(system, drive)?;
        Ok(Self {
            eps1,
            eps2,
            kappa_e: drive.kappa_e(),
            bandwidth,
            chain: *chain,
            duration,
            law,
        })
    }

    /// Chain parameters at sweep rate `omega_r`.
    pub fn chain_at(&self, omega_r: f64) -> Result<RateChainParams> {
        let gamma = injection_rate(self.eps1, self.eps2, omega_r, self.bandwidth, self.law)?;
        self.chain.with_rates(self.kappa_e, gamma, omega_r)
    }

    pub fn bulk_at(&self, omega_r: f64) -> Result<f64> {
        final_bulk(&self.chain_at(omega_r)?, self.duration)
    }

    pub fn profile(&self, omega_grid: &[f64], eta_e: f64, eta_r: f64) -> Result<DnpProfile> {
        let points = omega_grid
            .par_iter()
            .map(|&w| self.bulk_at(w).map(|p| (w, p)))
            .collect::<Result<Vec<_>>>()?;
        DnpProfile::new(
            points,
            ProfileMeta {
                eta_e,
                eta_r,
                bandwidth: self.bandwidth,
                duration: self.duration,
            },
        )
    }

    /// Maximiser of P_b(duration): log grid with `per_decade` points, then
    /// golden-section refinement in ln ω_r.
    pub fn omega_opt(&self, window: (f64, f64), per_decade: usize) -> Result<f64> {
        let (lo, hi) = window;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParameter(format!("bad window [{lo}, {hi}]")));
        }
        let n = (((hi / lo).log10() * per_decade as f64).ceil() as usize).max(2) + 1;
        let (la, lb) = (lo.ln(), hi.ln());
        let x = |i: usize| la + (lb - la) * i as f64 / (n - 1) as f64;
        let vals = (0..n)
            .into_par_iter()
            .map(|i| self.bulk_at(x(i).exp()))
            .collect::<Result<Vec<_>>>()?;
        let i = vals
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, &v)| if v > b.1 { (i, v) } else { b },
            )
            .0;
        if i == 0 || i == n - 1 {
            return Err(Error::NoInteriorMaximum { at: x(i).exp() });
        }
        let f = |l: f64| self.bulk_at(l.exp()).unwrap_or(f64::NEG_INFINITY);
        let (l, _) = golden_section_max(f, x(i - 1), x(i + 1), 1e-9, 200);
        Ok(l.exp())
    }
}

/// Bulk polarization after `duration` for one sweep rate. `chain` supplies
/// κ_d, T₁ₙ and the pool sizes; κ_e comes from `drive`.
pub fn bulk_polarization_at(
    system: &SpinSystem,
    drive: &DriveConfig,
    bandwidth: f64,
    chain: &RateChainParams,
    duration: f64,
    omega_r: f64,
    law: TunnelingLaw,
) -> Result<f64> {
    BulkModel::from_system(system, drive, bandwidth, chain, duration, law)?.bulk_at(omega_r)
}

/// P_b(duration) over a grid of sweep rates.
pub fn bulk_profile(
    system: &SpinSystem,
    drive: &DriveConfig,
    sweep: &SweepConfig,
    omega_grid: &[f64],
    chain: &RateChainParams,
    duration: f64,
    law: TunnelingLaw,
) -> Result<DnpProfile> {
    BulkModel::from_system(system, drive, sweep.bandwidth(), chain, duration, law)?.profile(
        omega_grid,
        drive.eta_e(),
        drive.eta_r(),
    )
}

/// Maximiser of the bulk profile, see [`BulkModel::omega_opt`].
#[allow(clippy::too_many_arguments)]
pub fn bulk_omega_opt(
    system: &SpinSystem,
    drive: &DriveConfig,
    bandwidth: f64,
    chain: &RateChainParams,
    duration: f64,
    window: (f64, f64),
    per_decade: usize,
    law: TunnelingLaw,
) -> Result<f64> {
    BulkModel::from_system(system, drive, bandwidth, chain, duration, law)?
        .omega_opt(window, per_decade)
}
