//! Exact density-matrix propagation through repeated frequency sweeps.
//!
//! Each sweep is split into piecewise-constant steps, H evaluated at the step
//! midpoint and exponentiated through its eigendecomposition. The Hamiltonian
//! is identical from sweep to sweep, so the one-sweep unitary is built once
//! and reused.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cascade::{analytic_lacs, HamiltonianModel};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::system::{to_angular, DriveConfig, SpinSystem, SweepConfig};

/// Largest accepted per-step phase 2π·max|λ|·dt (rad).
pub const MAX_STEP_PHASE: f64 = 0.5;
/// Step subdivision near each anti-crossing.
pub const REFINE_FACTOR: usize = 4;
/// Half-width of the refined band around a crossing, in units of its gap.
pub const REFINE_HALF_WIDTH: f64 = 20.0;
/// Steps between unitarity corrections of the accumulated product.
const REUNITARIZE_EVERY: usize = 4096;

/// Textbook Landau-Zener diabatic-passage probability for a full gap `eps`
/// (Hz) swept at `sweep_velocity` (Hz/s).
///
/// Both inputs are converted to angular units and inserted in
/// exp(−2π·(ε/2)²/v), which in ordinary-frequency units reads
/// exp(−π²·ε²/v).
pub fn lz_reference_probability(eps: f64, sweep_velocity: f64) -> f64 {
    if !(sweep_velocity > 0.0) {
        return if eps == 0.0 { 1.0 } else { 0.0 };
    }
    let e = to_angular(eps);
    let v = to_angular(sweep_velocity);
    (-TAU * (e / 2.0).powi(2) / v).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ResetMode {
    /// Electron projected onto m_s = 0.
    Full,
    /// Electron replaced by p_e·|0⟩⟨0| + (1 − p_e)·𝟙/2.
    Partial { p_e: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct PropagationPolicy {
    steps_per_sweep: usize,
    reset_mode: ResetMode,
    sweeps: usize,
    initial_polarization: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPolicy {
    #[serde(default = "default_steps")]
    steps_per_sweep: usize,
    #[serde(default = "default_reset")]
    reset_mode: ResetMode,
    #[serde(default = "default_sweeps")]
    sweeps: usize,
    #[serde(default)]
    initial_polarization: Vec<f64>,
}

fn default_steps() -> usize {
    PropagationPolicy::DEFAULT_STEPS
}
fn default_reset() -> ResetMode {
    ResetMode::Full
}
fn default_sweeps() -> usize {
    1
}

impl TryFrom<RawPolicy> for PropagationPolicy {
    type Error = Error;
    fn try_from(r: RawPolicy) -> Result<Self> {
        Self::new(r.steps_per_sweep, r.reset_mode, r.sweeps)?
            .with_initial_polarization(r.initial_polarization)
    }
}

impl PropagationPolicy {
    pub const DEFAULT_STEPS: usize = 10_000;

    pub fn new(steps_per_sweep: usize, reset_mode: ResetMode, sweeps: usize) -> Result<Self> {
        if steps_per_sweep == 0 {
            return Err(Error::InvalidParameter(
                "steps_per_sweep must be positive".into(),
            ));
        }
        if let ResetMode::Partial { p_e } = reset_mode {
            if !(0.0..=1.0).contains(&p_e) {
                return Err(Error::InvalidParameter(format!(
                    "electron polarization p_e = {p_e} is outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            steps_per_sweep,
            reset_mode,
            sweeps,
            initial_polarization: Vec::new(),
        })
    }

    /// Starting ⟨2I_z⟩ per nucleus (product state, diagonal). Empty means
    /// unpolarized.
    pub fn with_initial_polarization(mut self, p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InvalidParameter(
                "initial polarizations must lie in [-1, 1]".into(),
            ));
        }
        self.initial_polarization = p;
        Ok(self)
    }

    /// Smallest uniform step count that keeps the per-step phase under
    /// [`MAX_STEP_PHASE`], with a safety factor of 2.
    pub fn minimum_steps(system: &SpinSystem, drive: &DriveConfig, sweep: &SweepConfig) -> usize {
        let model = HamiltonianModel::new(system, drive);
        let (lo, hi) = sweep.window();
        let worst = spectral_radius(&model, lo).max(spectral_radius(&model, hi));
        let per_step = MAX_STEP_PHASE / (TAU * worst) * sweep.velocity();
        ((hi - lo) / per_step * 2.0).ceil() as usize
    }

    pub fn steps_per_sweep(&self) -> usize {
        self.steps_per_sweep
    }
    pub fn reset_mode(&self) -> ResetMode {
        self.reset_mode
    }
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
    pub fn initial_polarization(&self) -> &[f64] {
        &self.initial_polarization
    }
}

impl Default for PropagationPolicy {
    fn default() -> Self {
        Self::new(Self::DEFAULT_STEPS, ResetMode::Full, 1).expect("valid defaults")
    }
}

/// Bound on the traceless spectrum, from the Gershgorin discs.
fn spectral_radius(model: &HamiltonianModel, freq: f64) -> f64 {
    let h = model.at_frequency(freq);
    let m = h.as_matrix();
    let n = h.dim();
    let shift = h.trace() / n as f64;
    (0..n)
        .map(|i| {
            (m[(i, i)].re - shift).abs()
                + (0..n)
                    .filter(|&j| j != i)
                    .map(|j| m[(i, j)].norm())
                    .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Nuclear observables after one sweep, all using the ±1 normalisation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSnapshot {
    /// ⟨2I_zj⟩.
    pub iz: Vec<f64>,
    /// ⟨P₀ ⊗ 2I_zj⟩.
    pub iz_lower: Vec<f64>,
    /// ⟨P₁ ⊗ 2I′_zj⟩, quoted along the tilted m_s = +1 axis.
    pub iz_upper_tilted: Vec<f64>,
    /// Population of m_s = +1.
    pub excited: f64,
    pub trace: f64,
}

impl SweepSnapshot {
    /// ⟨P₀·2I_z + P₁·2I′_z⟩: the polarization in each manifold's own
    /// eigenbasis, which is what the sequential-crossing model tracks.
    pub fn adiabatic_basis(&self, j: usize) -> f64 {
        self.iz_lower[j] + self.iz_upper_tilted[j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuclearPolarizationRecord {
    /// Entry 0 is the initial state, entry k the state after sweep k.
    pub snapshots: Vec<SweepSnapshot>,
}

impl NuclearPolarizationRecord {
    pub fn n_nuclei(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.iz.len())
    }

    pub fn final_snapshot(&self) -> &SweepSnapshot {
        self.snapshots
            .last()
            .expect("record holds the initial state")
    }

    /// Writes `sweep_index,nucleus_index,iz_expectation`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sweep_index", "nucleus_index", "iz_expectation"])?;
        for (k, s) in self.snapshots.iter().enumerate() {
            for (j, v) in s.iz.iter().enumerate() {
                wr.write_record([k.to_string(), j.to_string(), format!("{v:.12e}")])?;
            }
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Piecewise-constant step list: (midpoint frequency, duration).
fn step_plan(model: &HamiltonianModel, sweep: &SweepConfig, steps: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = sweep.window();
    let df = (hi - lo) / steps as f64;
    let v = sweep.velocity();
    let mut bands: Vec<(f64, f64)> = analytic_lacs(model)
        .iter()
        .filter(|l| !l.degenerate)
        .map(|l| {
            let w = REFINE_HALF_WIDTH * l.gap;
            (l.location - w, l.location + w)
        })
        .collect();
    bands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut plan = Vec::with_capacity(steps + steps / 4);
    let mut b = 0;
    for k in 0..steps {
        let f0 = lo + df * k as f64;
        let f1 = if k + 1 == steps {
            hi
        } else {
            lo + df * (k + 1) as f64
        };
        while b < bands.len() && bands[b].1 < f0 {
            b += 1;
        }
        let refine = bands[b..]
            .iter()
            .take_while(|band| band.0 <= f1)
            .any(|band| band.1 >= f0);
        let sub = if refine { REFINE_FACTOR } else { 1 };
        let h = (f1 - f0) / sub as f64;
        for s in 0..sub {
            plan.push((f0 + h * (s as f64 + 0.5), h / v));
        }
    }
    plan
}

/// Unitary of one full sweep, exp(−i·2π·H·dt) steps multiplied in time order.
pub fn sweep_unitary(
    system: &SpinSystem,
    drive: &DriveConfig,
    sweep: &SweepConfig,
    steps_per_sweep: usize,
) -> Result<CMatrix> {
    let model = HamiltonianModel::new(system, drive);
    let dim = model.dim();
    let mut u = CMatrix::identity(dim, dim);
    let mut k = 0usize;
    for (f, dt) in step_plan(&model, sweep, steps_per_sweep) {
        let (step, phase) = model.at_frequency(f).propagator(dt);
        if phase > MAX_STEP_PHASE {
            return Err(Error::StepTooCoarse(format!(
                "per-step phase {phase:.3} rad exceeds {MAX_STEP_PHASE} rad at {f:.6e} Hz; \
                 use at least {} steps per sweep",
                PropagationPolicy::minimum_steps(system, drive, sweep)
            )));
        }
        u = step * u;
        k += 1;
        if k.is_multiple_of(REUNITARIZE_EVERY) {
            u = nearest_unitary(u);
        }
    }
    Ok(nearest_unitary(u))
}

/// Projects out the roundoff drift that accumulates over long products.
fn nearest_unitary(u: CMatrix) -> CMatrix {
    let svd = u.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(w), Some(vt)) => w * vt,
        _ => unreachable!("both singular-vector sets were requested"),
    }
}

fn initial_state(n: usize, pol: &[f64]) -> CMatrix {
    let half = 1usize << n;
    let mut rho = CMatrix::zeros(2 * half, 2 * half);
    for c in 0..half {
        let p: f64 = (0..n)
            .map(|j| {
                let pj = pol.get(j).copied().unwrap_or(0.0);
                if c >> j & 1 == 1 {
                    (1.0 + pj) / 2.0
                } else {
                    (1.0 - pj) / 2.0
                }
            })
            .product();
        rho[(c, c)] = Complex64::new(p, 0.0);
    }
    rho
}

/// Electron part replaced, nuclear reduced state kept.
fn reset(rho: &CMatrix, mode: ResetMode) -> CMatrix {
    let half = rho.nrows() / 2;
    let nuclear = CMatrix::from_fn(half, half, |i, j| rho[(i, j)] + rho[(half + i, half + j)]);
    let (w0, w1) = match mode {
        ResetMode::Full => (1.0, 0.0),
        ResetMode::Partial { p_e } => (p_e + (1.0 - p_e) / 2.0, (1.0 - p_e) / 2.0),
    };
    let mut out = CMatrix::zeros(2 * half, 2 * half);
    for i in 0..half {
        for j in 0..half {
            out[(i, j)] = nuclear[(i, j)] * w0;
            out[(half + i, half + j)] = nuclear[(i, j)] * w1;
        }
    }
    out
}

fn snapshot(rho: &CMatrix, n: usize, alpha: &[f64]) -> SweepSnapshot {
    let half = 1usize << n;
    let mut iz = vec![0.0; n];
    let mut iz_lower = vec![0.0; n];
    let mut iz_upper = vec![0.0; n];
    let mut excited = 0.0;
    let mut trace = 0.0;
    for c in 0..half {
        let p0 = rho[(c, c)].re;
        let p1 = rho[(half + c, half + c)].re;
        excited += p1;
        trace += p0 + p1;
        for j in 0..n {
            let s = if c >> j & 1 == 1 { 1.0 } else { -1.0 };
            iz[j] += s * (p0 + p1);
            iz_lower[j] += s * p0;
            iz_upper[j] += s * p1 * alpha[j].cos();
            // 2I_x couples c with c ^ (1 << j): Re ρ terms from both orders.
            let partner = c ^ (1 << j);
            iz_upper[j] += alpha[j].sin() * rho[(half + partner, half + c)].re;
        }
    }
    SweepSnapshot {
        iz,
        iz_lower,
        iz_upper_tilted: iz_upper,
        excited,
        trace,
    }
}

/// Propagates `policy.sweeps()` sweeps, resetting the electron at the start
/// of each one, and records nuclear polarization after every sweep.
pub fn propagate_sweep(
    system: &SpinSystem,
    drive: &DriveConfig,
    sweep: &SweepConfig,
    policy: &PropagationPolicy,
) -> Result<NuclearPolarizationRecord> {
    let n = system.n_nuclei();
    if n > system.exact_cap() {
        return Err(Error::TooManyNuclei {
            nuclei: n,
            cap: system.exact_cap(),
        });
    }
    if policy.initial_polarization.len() > n {
        return Err(Error::InvalidParameter(format!(
            "{} initial polarizations given for {n} nuclei",
            policy.initial_polarization.len()
        )));
    }
    let model = HamiltonianModel::new(system, drive);
    let alpha = model.terms.alpha.clone();
    let u = sweep_unitary(system, drive, sweep, policy.steps_per_sweep)?;
    let ud = u.adjoint();
    let mut rho = initial_state(n, &policy.initial_polarization);
    let mut snapshots = Vec::with_capacity(policy.sweeps + 1);
    snapshots.push(snapshot(&rho, n, &alpha));
    for _ in 0..policy.sweeps {
        rho = reset(&rho, policy.reset_mode);
        rho = &u * rho * &ud;
        snapshots.push(snapshot(&rho, n, &alpha));
    }
    Ok(NuclearPolarizationRecord { snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{HyperfineCoupling, PhysicalConstants};

    fn system(a_perp: f64) -> SpinSystem {
        SpinSystem::new(
            PhysicalConstants::default(),
            0.036,
            vec![HyperfineCoupling::new(1e6, a_perp).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn reference_limits() {
        assert_eq!(lz_reference_probability(0.0, 1e9), 1.0);
        assert_eq!(lz_reference_probability(1e4, 0.0), 0.0);
        let p = lz_reference_probability(3e4, 2.4e9);
        let want = (-std::f64::consts::PI.powi(2) * 9e8 / 2.4e9).exp();
        assert!((p - want).abs() < 1e-14);
    }

    #[test]
    fn reset_preserves_nuclear_state() {
        let n = 2;
        let dim = 2 << n;
        // Arbitrary Hermitian positive matrix with unit trace.
        let a = CMatrix::from_fn(dim, dim, |i, j| {
            Complex64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05)
        });
        let mut rho = &a * a.adjoint();
        let tr: Complex64 = rho.trace();
        rho /= tr;
        let half = dim / 2;
        let before = CMatrix::from_fn(half, half, |i, j| rho[(i, j)] + rho[(half + i, half + j)]);
        for mode in [ResetMode::Full, ResetMode::Partial { p_e: 0.1 }] {
            let r = reset(&rho, mode);
            let after = CMatrix::from_fn(half, half, |i, j| r[(i, j)] + r[(half + i, half + j)]);
            assert!((after - &before).norm() < 1e-12);
        }
    }

    #[test]
    fn no_tilt_means_no_transfer() {
        let s = system(0.0);
        let d = DriveConfig::from_rates(0.0, 50e3).unwrap();
        let w = SweepConfig::new(s.electron_resonance(), 3e6, 500.0, 0.0).unwrap();
        let steps = PropagationPolicy::minimum_steps(&s, &d, &w);
        let p = PropagationPolicy::new(steps, ResetMode::Full, 3)
            .unwrap()
            .with_initial_polarization(vec![0.4])
            .unwrap();
        let r = propagate_sweep(&s, &d, &w, &p).unwrap();
        for snap in &r.snapshots {
            assert!((snap.iz[0] - 0.4).abs() < 1e-10, "{:?}", snap);
            assert!((snap.trace - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn no_drive_means_no_excitation() {
        let s = system(200e3);
        let d = DriveConfig::from_rates(0.0, 0.0).unwrap();
        let w = SweepConfig::new(s.electron_resonance(), 3e6, 500.0, 0.0).unwrap();
        let steps = PropagationPolicy::minimum_steps(&s, &d, &w);
        let p = PropagationPolicy::new(steps, ResetMode::Full, 2)
            .unwrap()
            .with_initial_polarization(vec![-0.3])
            .unwrap();
        let r = propagate_sweep(&s, &d, &w, &p).unwrap();
        for snap in &r.snapshots {
            assert!(snap.excited.abs() < 1e-12);
            assert!((snap.iz[0] + 0.3).abs() < 1e-10);
        }
    }

    #[test]
    fn coarse_steps_rejected() {
        let s = system(200e3);
        let d = DriveConfig::from_rates(0.0, 50e3).unwrap();
        let w = SweepConfig::new(s.electron_resonance(), 3e6, 500.0, 0.0).unwrap();
        let p = PropagationPolicy::new(1000, ResetMode::Full, 1).unwrap();
        assert!(matches!(
            propagate_sweep(&s, &d, &w, &p),
            Err(Error::StepTooCoarse(_))
        ));
    }

    #[test]
    fn partial_reset_validated() {
        assert!(PropagationPolicy::new(10, ResetMode::Partial { p_e: 1.5 }, 1).is_err());
        assert!(PropagationPolicy::new(0, ResetMode::Full, 1).is_err());
    }

    #[test]
    fn record_csv_layout() {
        let r = NuclearPolarizationRecord {
            snapshots: vec![SweepSnapshot {
                iz: vec![0.0, 0.5],
                iz_lower: vec![0.0, 0.5],
                iz_upper_tilted: vec![0.0, 0.0],
                excited: 0.0,
                trace: 1.0,
            }],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sweep_index,nucleus_index,iz_expectation");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("0,1,5.0"));
    }
}
