//! Rotating-frame Hamiltonian and the Landau-Zener anti-crossing cascade.
//!
//! Basis ordering: index = e·2ᴺ + c, where e ∈ {0, 1} labels the electron
//! levels m_s = 0 and m_s = +1, and bit j of c is set when nucleus j is up.
//! In the m_s = +1 block the nuclear states are quoted in the tilted basis
//! that diagonalises that manifold's nuclear Zeeman-plus-hyperfine term.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::optimize::golden_section_min;
use crate::system::{DriveConfig, SpinSystem, SweepConfig};

/// Uniform samples across the sweep window for the eigen-gap scan.
pub const SCAN_SAMPLES: usize = 4096;

/// A gap below this fraction of the Rabi frequency counts as vanished.
const DEGENERATE_REL: f64 = 1e-9;
/// Same threshold for scanned gaps, looser because golden-section refinement
/// of a true crossing stops at a small but finite splitting.
const SCAN_DEGENERATE_REL: f64 = 1e-6;

/// Nuclear precession frequencies (ω⁰_j, ω¹_j) in the m_s = 0 and m_s = +1
/// manifolds.
///
/// ω⁰ = ω_n + γ_e·B₀·A⊥/Δ and ω¹ = √((ω_n + A∥)² + A⊥²).
pub fn nuclear_frequencies(system: &SpinSystem, j: usize) -> Result<(f64, f64)> {
    let n = nucleus(system, j)?;
    let wn = system.omega_n();
    let c = system.constants();
    let w0 = wn + c.gamma_e() * system.b0() * n.a_perp() / c.delta_zfs();
    let w1 = (wn + n.a_par()).hypot(n.a_perp());
    Ok((w0, w1))
}

/// Tilt α_j = atan2(A⊥, ω_n + A∥) of the m_s = +1 nuclear quantisation axis.
pub fn tilt_angle(system: &SpinSystem, j: usize) -> Result<f64> {
    let n = nucleus(system, j)?;
    Ok(n.a_perp().atan2(system.omega_n() + n.a_par()))
}

fn nucleus(system: &SpinSystem, j: usize) -> Result<crate::system::HyperfineCoupling> {
    system
        .nuclei()
        .get(j)
        .copied()
        .ok_or(Error::NucleusOutOfRange {
            index: j,
            count: system.n_nuclei(),
        })
}

/// Per-nucleus terms cached for repeated Hamiltonian construction.
#[derive(Debug, Clone)]
pub(crate) struct NuclearTerms {
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl NuclearTerms {
    pub fn new(system: &SpinSystem) -> Self {
        let n = system.n_nuclei();
        let mut t = Self {
            w0: Vec::with_capacity(n),
            w1: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
        };
        for j in 0..n {
            let (w0, w1) = nuclear_frequencies(system, j).expect("index in range");
            t.w0.push(w0);
            t.w1.push(w1);
            t.alpha.push(tilt_angle(system, j).expect("index in range"));
        }
        t
    }

    pub fn n(&self) -> usize {
        self.w0.len()
    }
}

/// Hamiltonian builder with the drive-independent parts precomputed.
#[derive(Debug, Clone)]
pub(crate) struct HamiltonianModel {
    pub terms: NuclearTerms,
    pub rabi: f64,
    pub resonance: f64,
}

impl HamiltonianModel {
    pub fn new(system: &SpinSystem, drive: &DriveConfig) -> Self {
        Self {
            terms: NuclearTerms::new(system),
            rabi: drive.rabi(),
            resonance: system.electron_resonance(),
        }
    }

    pub fn dim(&self) -> usize {
        2usize << self.terms.n()
    }

    /// H at detuning δ = (Δ − γ_e·B₀) − ω_MW.
    pub fn at_detuning(&self, detuning: f64) -> HermitianMatrix {
        let n = self.terms.n();
        let half = 1usize << n;
        let mut h = HermitianMatrix::zeros(2 * half);
        for c in 0..half {
            let mut e0 = 0.0;
            let mut e1 = detuning;
            for j in 0..n {
                let s = if c >> j & 1 == 1 { 0.5 } else { -0.5 };
                e0 += self.terms.w0[j] * s;
                e1 += self.terms.w1[j] * self.terms.alpha[j].cos() * s;
            }
            h.add_hermitian(c, c, Complex64::new(e0, 0.0));
            h.add_hermitian(half + c, half + c, Complex64::new(e1, 0.0));
            h.add_hermitian(c, half + c, Complex64::new(self.rabi / 2.0, 0.0));
            for j in 0..n {
                let partner = c ^ (1 << j);
                if partner > c {
                    let x = self.terms.w1[j] * self.terms.alpha[j].sin() * 0.5;
                    h.add_hermitian(half + c, half + partner, Complex64::new(x, 0.0));
                }
            }
        }
        h
    }

    pub fn at_frequency(&self, omega_mw: f64) -> HermitianMatrix {
        self.at_detuning(self.resonance - omega_mw)
    }
}

/// H(ω_MW) on {m_s = 0, +1} ⊗ N nuclear spin-½ spaces, in Hz.
///
/// δ·P₁ + (Ω_e/2)(|0⟩⟨1| + h.c.) + P₀·Σ ω⁰_j I_zj + P₁·Σ ω¹_j I′_zj,
/// with δ = (Δ − γ_e·B₀) − ω_MW and I′_z = cos α·I_z + sin α·I_x.
pub fn build_hamiltonian(
    system: &SpinSystem,
    drive: &DriveConfig,
    omega_mw: f64,
) -> HermitianMatrix {
    HamiltonianModel::new(system, drive).at_frequency(omega_mw)
}

/// Closed-form gap estimates (ε₁ ≈ Ω_e, ε₂ ≈ 2Ω_e·A⊥/(ω_n + A∥))
/// for nucleus `j`. These are small-angle estimates; the exact isolated-crossing
/// gaps come from [`conditional_gaps`].
pub fn closed_form_gap_estimates(
    system: &SpinSystem,
    drive: &DriveConfig,
    j: usize,
) -> Result<(f64, f64)> {
    let n = nucleus(system, j)?;
    let denom = system.omega_n() + n.a_par();
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "omega_n + a_par = {denom} Hz is not positive; the small-gap estimate is undefined"
        )));
    }
    let rabi = drive.rabi();
    Ok((rabi, 2.0 * rabi * n.a_perp() / denom))
}

/// Exact single-nucleus crossing gaps (nuclear-state conserving, flipping):
/// Ω_e·cos(α/2) and Ω_e·sin(α/2).
pub fn conditional_gaps(system: &SpinSystem, drive: &DriveConfig, j: usize) -> Result<(f64, f64)> {
    let a = tilt_angle(system, j)?;
    let rabi = drive.rabi();
    Ok((rabi * (a / 2.0).cos().abs(), rabi * (a / 2.0).sin().abs()))
}

/// One avoided crossing between |0, lower⟩ and |+1, upper′⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lac {
    /// Sweep frequency ω_MW at the gap minimum (Hz).
    pub location: f64,
    /// Full minimum splitting (Hz).
    pub gap: f64,
    /// Nuclear configuration in the m_s = 0 manifold.
    pub lower: usize,
    /// Nuclear configuration (tilted basis) in the m_s = +1 manifold.
    pub upper: usize,
    pub n_nuclei: usize,
    /// The gap vanishes (A⊥ = 0 for a flipped nucleus, or Ω_e = 0).
    pub degenerate: bool,
    /// Number of analytic crossings that coincide at this location.
    pub multiplicity: usize,
}

impl Lac {
    /// Number of nuclei whose state differs across the crossing.
    pub fn flips(&self) -> u32 {
        (self.lower ^ self.upper).count_ones()
    }

    /// Label such as `ud->dd'`: nucleus 0 first, `u`/`d` for up/down.
    pub fn branch_label(&self) -> String {
        format!(
            "{}->{}'",
            config_string(self.lower, self.n_nuclei),
            config_string(self.upper, self.n_nuclei)
        )
    }

    /// Inverse of [`Lac::branch_label`]: returns (lower, upper, n_nuclei).
    pub fn parse_label(label: &str) -> Result<(usize, usize, usize)> {
        let bad = || Error::InvalidParameter(format!("malformed branch label {label:?}"));
        let (a, b) = label.split_once("->").ok_or_else(bad)?;
        let b = b.strip_suffix('\'').ok_or_else(bad)?;
        if a.len() != b.len() {
            return Err(bad());
        }
        let parse = |s: &str| -> Result<usize> {
            s.chars()
                .enumerate()
                .try_fold(0usize, |acc, (j, ch)| match ch {
                    'u' => Ok(acc | 1 << j),
                    'd' => Ok(acc),
                    _ => Err(bad()),
                })
        };
        Ok((parse(a)?, parse(b)?, a.len()))
    }
}

fn config_string(c: usize, n: usize) -> String {
    (0..n)
        .map(|j| if c >> j & 1 == 1 { 'u' } else { 'd' })
        .collect()
}

/// Anti-crossings ordered by sweep frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LacCascade {
    lacs: Vec<Lac>,
}

#[derive(Serialize, Deserialize)]
struct LacRow {
    location_hz: f64,
    gap_hz: f64,
    branch_label: String,
}

impl LacCascade {
    pub fn new(mut lacs: Vec<Lac>) -> Result<Self> {
        for l in &lacs {
            if !(l.location.is_finite() && l.gap.is_finite() && l.gap >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "crossing {} has invalid location/gap",
                    l.branch_label()
                )));
            }
        }
        lacs.sort_by(|a, b| a.location.total_cmp(&b.location));
        Ok(Self { lacs })
    }

    pub fn lacs(&self) -> &[Lac] {
        &self.lacs
    }
    pub fn len(&self) -> usize {
        self.lacs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lacs.is_empty()
    }
    pub fn n_nuclei(&self) -> usize {
        self.lacs.first().map_or(0, |l| l.n_nuclei)
    }
    pub fn has_degenerate(&self) -> bool {
        self.lacs.iter().any(|l| l.degenerate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for l in &self.lacs {
            wr.serialize(LacRow {
                location_hz: l.location,
                gap_hz: l.gap,
                branch_label: l.branch_label(),
            })?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut lacs = Vec::new();
        for row in rd.deserialize() {
            let row: LacRow = row?;
            let (lower, upper, n) = Lac::parse_label(&row.branch_label)?;
            lacs.push(Lac {
                location: row.location_hz,
                gap: row.gap_hz,
                lower,
                upper,
                n_nuclei: n,
                degenerate: row.gap_hz == 0.0,
                multiplicity: 1,
            });
        }
        Self::new(lacs)
    }
}

/// All 2^(2N) isolated-crossing predictions, from first-order degenerate
/// perturbation theory in Ω_e.
///
/// |0, a⟩ meets |+1, b′⟩ at ω_MW = (Δ − γ_e·B₀) − E⁰(a) + E¹(b), where E⁰, E¹
/// are the manifold nuclear energies, with gap Ω_e·|⟨a|b′⟩| and
/// |⟨a|b′⟩| = Π_j (cos(α_j/2) if unchanged, sin(α_j/2) if flipped).
pub fn analytic_cascade(system: &SpinSystem, drive: &DriveConfig) -> Result<LacCascade> {
    let model = HamiltonianModel::new(system, drive);
    LacCascade::new(analytic_lacs(&model))
}

pub(crate) fn analytic_lacs(model: &HamiltonianModel) -> Vec<Lac> {
    let t = &model.terms;
    let n = t.n();
    let half = 1usize << n;
    let energy = |c: usize, w: &[f64]| -> f64 {
        (0..n)
            .map(|j| {
                if c >> j & 1 == 1 {
                    w[j] / 2.0
                } else {
                    -w[j] / 2.0
                }
            })
            .sum()
    };
    let mut out = Vec::with_capacity(half * half);
    for a in 0..half {
        for b in 0..half {
            let overlap: f64 = (0..n)
                .map(|j| {
                    let h = t.alpha[j] / 2.0;
                    if (a ^ b) >> j & 1 == 1 {
                        h.sin().abs()
                    } else {
                        h.cos().abs()
                    }
                })
                .product();
            let gap = model.rabi * overlap;
            out.push(Lac {
                location: model.resonance - energy(a, &t.w0) + energy(b, &t.w1),
                gap,
                lower: a,
                upper: b,
                n_nuclei: n,
                degenerate: gap <= DEGENERATE_REL * model.rabi,
                multiplicity: 1,
            });
        }
    }
    out
}

/// Numerically locates the anti-crossings inside the sweep window.
///
/// Scans [`SCAN_SAMPLES`] uniform ω_MW points, records local minima of every
/// adjacent eigenvalue difference and refines each by golden-section search.
/// Each minimum is labelled by the nearest analytic crossing; analytic
/// crossings that coincide are folded into one entry with `multiplicity > 1`.
pub fn locate_lacs(
    system: &SpinSystem,
    drive: &DriveConfig,
    sweep: &SweepConfig,
) -> Result<LacCascade> {
    if system.n_nuclei() == 0 {
        return Err(Error::InvalidParameter(
            "anti-crossing scan needs at least one nucleus".into(),
        ));
    }
    if system.n_nuclei() > system.exact_cap() {
        return Err(Error::TooManyNuclei {
            nuclei: system.n_nuclei(),
            cap: system.exact_cap(),
        });
    }
    let model = HamiltonianModel::new(system, drive);
    let (lo, hi) = sweep.window();
    let spacing = (hi - lo) / (SCAN_SAMPLES - 1) as f64;
    let freq = |i: usize| lo + spacing * i as f64;

    let spectra: Vec<Vec<f64>> = (0..SCAN_SAMPLES)
        .into_par_iter()
        .map(|i| model.at_frequency(freq(i)).eigenvalues())
        .collect();

    let dim = model.dim();
    let scale = spectra
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(model.rabi)
        .max(1.0);
    let noise = 1e-10 * scale;
    let ceiling = 1.05 * model.rabi + 2.0 * spacing;

    // (pair index k, sample index i)
    let mut candidates = Vec::new();
    for k in 0..dim - 1 {
        for i in 1..SCAN_SAMPLES - 1 {
            let d = |i: usize| spectra[i][k + 1] - spectra[i][k];
            let (dm, d0, dp) = (d(i - 1), d(i), d(i + 1));
            if d0 < dm - noise && d0 <= dp + noise && d0 < dp.max(dm) - noise && d0 <= ceiling {
                candidates.push((k, i));
            }
        }
    }

    let mut found: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&(k, i)| {
            let centre = freq(i);
            let pair_gap = |x: f64| {
                let ev = model.at_frequency(centre + x).eigenvalues();
                ev[k + 1] - ev[k]
            };
            let (x, g) = golden_section_min(pair_gap, -spacing, spacing, spacing * 1e-10, 200);
            (centre + x, g.max(0.0))
        })
        .filter(|&(loc, g)| g <= 1.05 * model.rabi + noise && loc > lo && loc < hi)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    // The same crossing can surface from two adjacent samples.
    found.dedup_by(|b, a| {
        (a.0 - b.0).abs() < 1e-6 * spacing && (a.1 - b.1).abs() <= noise + 1e-9 * a.1
    });

    if found.is_empty() {
        return Err(Error::NoCrossingInBandwidth { lo, hi });
    }

    // Assign analytic crossings to numerical minima.
    let analytic = analytic_lacs(&model);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); found.len()];
    for (ai, a) in analytic.iter().enumerate() {
        let best = found
            .iter()
            .enumerate()
            .filter(|(_, f)| (f.0 - a.location).abs() <= (3.0 * f.1).max(spacing))
            .min_by(|(_, f1), (_, f2)| {
                let score = |f: &(f64, f64)| {
                    (f.0 - a.location).abs() / spacing
                        + ((f.1 + noise) / (a.gap + noise)).ln().abs()
                };
                score(f1).total_cmp(&score(f2))
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            assigned[i].push(ai);
        }
    }

    // A minimum no crossing claims is a level-ordering kink between
    // uncoupled levels, not an anti-crossing.
    let n = system.n_nuclei();
    let lacs: Vec<Lac> = found
        .iter()
        .zip(&assigned)
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(&(loc, g), idx)| {
            let primary = idx
                .iter()
                .copied()
                .min_by(|&p, &q| {
                    let r = |a: &Lac| ((g + noise) / (a.gap + noise)).ln().abs();
                    r(&analytic[p]).total_cmp(&r(&analytic[q]))
                })
                .expect("non-empty assignment");
            let a = &analytic[primary];
            let degenerate = a.degenerate || g <= SCAN_DEGENERATE_REL * model.rabi;
            Lac {
                location: loc,
                gap: if degenerate { 0.0 } else { g },
                lower: a.lower,
                upper: a.upper,
                n_nuclei: n,
                degenerate,
                multiplicity: idx.len(),
            }
        })
        .collect();
    if lacs.is_empty() {
        return Err(Error::NoCrossingInBandwidth { lo, hi });
    }
    LacCascade::new(lacs)
}
