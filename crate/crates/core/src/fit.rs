//! Fitting sweep-rate profiles to the ratchet model and regressing the
//! optimal rate against optical power.

use std::io::{Read, Write};

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratchet::{find_omega_opt_with, total_polarization_with, RatchetParams, TunnelingLaw};

/// Covariance condition number above which a fit is flagged ambiguous.
pub const AMBIGUITY_CONDITION: f64 = 1e10;
const DEFAULT_MAX_ITER: usize = 500;
const DEFAULT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub eta_e: f64,
    pub eta_r: f64,
    pub bandwidth: f64,
    pub duration: f64,
}

/// A sampled P(ω_r) curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnpProfile {
    points: Vec<(f64, f64)>,
    meta: ProfileMeta,
}

#[derive(Serialize, Deserialize)]
struct ProfileRow {
    omega_r_hz: f64,
    #[serde(alias = "p_total")]
    signal: f64,
}

impl DnpProfile {
    pub fn new(points: Vec<(f64, f64)>, meta: ProfileMeta) -> Result<Self> {
        if points.len() < 5 {
            return Err(Error::InvalidProfile(format!(
                "need at least 5 points, got {}",
                points.len()
            )));
        }
        if points
            .iter()
            .any(|p| !(p.0.is_finite() && p.0 > 0.0 && p.1.is_finite()))
        {
            return Err(Error::InvalidProfile(
                "sweep rates must be positive and signals finite".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidProfile(
                "sweep rates must be strictly increasing".into(),
            ));
        }
        if !(meta.bandwidth > 0.0 && meta.duration > 0.0) {
            return Err(Error::InvalidProfile(
                "profile metadata needs a positive bandwidth and duration".into(),
            ));
        }
        Ok(Self { points, meta })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
    pub fn meta(&self) -> &ProfileMeta {
        &self.meta
    }

    /// Every signal multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.points.iter().map(|&(w, s)| (w, s * c)).collect(),
            self.meta,
        )
    }

    /// Data point with the largest signal.
    pub fn argmax(&self) -> (f64, f64) {
        self.points
            .iter()
            .copied()
            .fold(
                (f64::NAN, f64::NEG_INFINITY),
                |b, p| if p.1 > b.1 { p } else { b },
            )
    }

    /// Writes `omega_r_hz,signal`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["omega_r_hz", "signal"])?;
        for &(om, s) in &self.points {
            wr.write_record([format!("{om:.12e}"), format!("{s:.12e}")])?;
        }
        wr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads `omega_r_hz,signal` (a `p_total` column is accepted for the
    /// signal); metadata comes from the caller.
    pub fn read_csv<R: Read>(r: R, meta: ProfileMeta) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        for row in rd.deserialize() {
            let row: ProfileRow = row?;
            points.push((row.omega_r_hz, row.signal));
        }
        Self::new(points, meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Σ (y − m)².
    #[default]
    Uniform,
    /// Σ ((y − m)/y)², appropriate for multiplicative noise.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub law: TunnelingLaw,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Search window for ω_opt on the fitted curve.
    pub omega_window: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Uniform,
            law: TunnelingLaw::Paper,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
            omega_window: crate::ratchet::DEFAULT_OMEGA_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub kappa_e_fit: f64,
    pub eps1_fit: f64,
    pub eps2_fit: f64,
    pub omega_opt: f64,
    /// √Σ r², in the weighting used.
    pub residual_norm: f64,
    /// Covariance of (amplitude, κ_e, ε₁, ε₂).
    pub covariance: [[f64; 4]; 4],
    /// Condition number of the log-parameter covariance.
    pub condition_number: f64,
    /// Covariance too ill-conditioned to trust individual parameters.
    pub ambiguous: bool,
    /// ω_opt is outside the sampled range or on the search boundary.
    pub extrapolated: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn ratchet_params(&self, meta: &ProfileMeta) -> Result<RatchetParams> {
        RatchetParams::new(
            self.kappa_e_fit,
            self.eps1_fit,
            self.eps2_fit,
            meta.bandwidth,
            meta.duration,
        )
    }

    /// Standard errors from the covariance diagonal.
    pub fn standard_errors(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }
}

/// Model curve A·P_total(ω_r).
pub fn model_signal(
    omega_r: f64,
    amplitude: f64,
    kappa_e: f64,
    eps1: f64,
    eps2: f64,
    meta: &ProfileMeta,
    law: TunnelingLaw,
) -> f64 {
    match RatchetParams::new(kappa_e, eps1, eps2, meta.bandwidth, meta.duration) {
        Ok(p) => amplitude * total_polarization_with(&p, omega_r, law),
        Err(_) => f64::NAN,
    }
}

/// θ = (ln A, ln κ_e, ln ε₁, q) with ε₂ = ε₁·e^q/(1 + e^q) < ε₁.
fn natural(theta: &Vector4<f64>) -> [f64; 4] {
    let s = logistic(theta[3]);
    [
        theta[0].exp(),
        theta[1].exp(),
        theta[2].exp(),
        theta[2].exp() * s,
    ]
}

fn logistic(q: f64) -> f64 {
    1.0 / (1.0 + (-q).exp())
}

fn to_theta(a: f64, k: f64, e1: f64, e2: f64) -> Vector4<f64> {
    let s = (e2 / e1).clamp(1e-9, 1.0 - 1e-9);
    Vector4::new(a.ln(), k.ln(), e1.ln(), (s / (1.0 - s)).ln())
}

struct Problem<'a> {
    profile: &'a DnpProfile,
    opts: &'a FitOptions,
    weights: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(profile: &'a DnpProfile, opts: &'a FitOptions) -> Self {
        let ymax = profile.points.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        let floor = 1e-12 * ymax.max(f64::MIN_POSITIVE);
        let weights = profile
            .points
            .iter()
            .map(|p| match opts.weighting {
                Weighting::Uniform => 1.0,
                Weighting::Relative => 1.0 / p.1.abs().max(floor),
            })
            .collect();
        Self {
            profile,
            opts,
            weights,
        }
    }

    fn residuals(&self, theta: &Vector4<f64>) -> Vec<f64> {
        let [a, k, e1, e2] = natural(theta);
        self.profile
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&(w, y), wt)| {
                wt * (y - model_signal(w, a, k, e1, e2, &self.profile.meta, self.opts.law))
            })
            .collect()
    }

    fn cost(&self, theta: &Vector4<f64>) -> f64 {
        self.residuals(theta).iter().map(|r| r * r).sum()
    }

    /// Central-difference Jacobian of the residuals, rows = points.
    fn jacobian(&self, theta: &Vector4<f64>) -> Vec<[f64; 4]> {
        let n = self.profile.points.len();
        let mut j = vec![[0.0; 4]; n];
        for c in 0..4 {
            let h = 1e-6 * theta[c].abs().max(1.0);
            let mut tp = *theta;
            let mut tm = *theta;
            tp[c] += h;
            tm[c] -= h;
            let (rp, rm) = (self.residuals(&tp), self.residuals(&tm));
            for i in 0..n {
                j[i][c] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        j
    }

    fn normal(&self, theta: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let r = self.residuals(theta);
        let jac = self.jacobian(theta);
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..4 {
                jtr[a] += row[a] * ri;
                for b in 0..4 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        (jtj, jtr)
    }
}

struct LmOutcome {
    theta: Vector4<f64>,
    cost: f64,
    iterations: usize,
}

/// Damped Gauss-Newton with Marquardt diagonal scaling; λ is halved after
/// an accepted step and quadrupled after a rejected one.
fn levenberg_marquardt(p: &Problem, start: Vector4<f64>) -> Result<LmOutcome> {
    let mut theta = start;
    let mut cost = p.cost(&theta);
    if !cost.is_finite() {
        return Err(Error::FitDiverged(format!("initial cost is {cost}")));
    }
    let mut lambda = 1e-3;
    let mut it = 0;
    while it < p.opts.max_iter {
        it += 1;
        let (jtj, jtr) = p.normal(&theta);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let step = match a.lu().solve(&jtr) {
                Some(s) => s,
                None => {
                    lambda *= 4.0;
                    continue;
                }
            };
            // J is the Jacobian of the residuals, so the descent step is −step.
            let trial = theta - step;
            let tc = p.cost(&trial);
            if tc.is_finite() && tc < cost {
                let rel = (cost - tc) / cost.max(f64::MIN_POSITIVE);
                theta = trial;
                cost = tc;
                lambda = (lambda * 0.5).max(1e-12);
                accepted = true;
                if rel < p.opts.rel_tol {
                    return Ok(LmOutcome {
                        theta,
                        cost,
                        iterations: it,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::FitDiverged(format!("cost became {cost}")));
    }
    Ok(LmOutcome {
        theta,
        cost,
        iterations: it,
    })
}

/// Starting points: the rising-edge heuristic plus a few deterministic
/// variations in κ_e and ε₂/ε₁.
fn initial_guesses(profile: &DnpProfile, law: TunnelingLaw) -> Vec<Vector4<f64>> {
    let meta = profile.meta;
    let (w_max, y_max) = profile.argmax();
    let rising_half = profile
        .points
        .iter()
        .take_while(|p| p.0 <= w_max)
        .find(|p| p.1 >= y_max / 2.0)
        .map_or(w_max, |p| p.0);
    let eps1 = (w_max * meta.bandwidth).sqrt();
    let mut out = Vec::new();
    for kf in [1.0, 10.0, 0.1] {
        for ratio in [1.0 / 3.0, 1.0 / 10.0, 2.0 / 3.0] {
            let kappa = rising_half * kf;
            let eps2 = eps1 * ratio;
            let unit = model_signal(w_max, 1.0, kappa, eps1, eps2, &meta, law);
            let amp = if unit > 0.0 && y_max > 0.0 {
                y_max / unit
            } else {
                y_max.abs().max(1.0)
            };
            out.push(to_theta(amp, kappa, eps1, eps2));
        }
    }
    out
}

/// Least-squares fit of A·P_total(ω_r; κ_e, ε₁, ε₂) with default options
/// (uniform weights, model tunneling law).
pub fn fit_profile(profile: &DnpProfile, init: Option<&FitResult>) -> Result<FitResult> {
    fit_profile_with(profile, init, &FitOptions::default())
}

pub fn fit_profile_with(
    profile: &DnpProfile,
    init: Option<&FitResult>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let problem = Problem::new(profile, opts);
    let starts = match init {
        Some(f) => vec![to_theta(f.amplitude, f.kappa_e_fit, f.eps1_fit, f.eps2_fit)],
        None => initial_guesses(profile, opts.law),
    };
    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for s in starts {
        match levenberg_marquardt(&problem, s) {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.cost < b.cost) {
                    best = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or_else(|| Error::FitDiverged("no start".into()))),
    };
    finish(profile, opts, &problem, best)
}

fn finish(
    profile: &DnpProfile,
    opts: &FitOptions,
    problem: &Problem,
    best: LmOutcome,
) -> Result<FitResult> {
    let [a, k, e1, e2] = natural(&best.theta);
    let n = profile.points.len();
    let dof = n.saturating_sub(4).max(1) as f64;
    let sigma2 = best.cost / dof;
    let (jtj, _) = problem.normal(&best.theta);
    let (cov_theta, condition) = match jtj.try_inverse() {
        Some(inv) => {
            let c = inv * sigma2;
            let ev = SymmetricEigen::new(c).eigenvalues;
            let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| {
                (l.min(v.abs()), h.max(v.abs()))
            });
            (c, if lo > 0.0 { hi / lo } else { f64::INFINITY })
        }
        None => (Matrix4::from_element(f64::NAN), f64::INFINITY),
    };
    let s = logistic(best.theta[3]);
    let mut g = Matrix4::zeros();
    g[(0, 0)] = a;
    g[(1, 1)] = k;
    g[(2, 2)] = e1;
    g[(3, 2)] = e2;
    g[(3, 3)] = e1 * s * (1.0 - s);
    let cov = g * cov_theta * g.transpose();

    let params = RatchetParams::new(k, e1, e2, profile.meta.bandwidth, profile.meta.duration)?;
    let (omega_opt, boundary) = match find_omega_opt_with(&params, opts.omega_window, opts.law) {
        Ok(w) => (w, false),
        Err(Error::NoInteriorMaximum { at }) => (at, true),
        Err(e) => return Err(e),
    };
    let (lo, hi) = (profile.points[0].0, profile.points[n - 1].0);
    Ok(FitResult {
        amplitude: a,
        kappa_e_fit: k,
        eps1_fit: e1,
        eps2_fit: e2,
        omega_opt,
        residual_norm: best.cost.sqrt(),
        covariance: std::array::from_fn(|i| std::array::from_fn(|j| cov[(i, j)])),
        condition_number: condition,
        ambiguous: !(condition <= AMBIGUITY_CONDITION),
        extrapolated: boundary || omega_opt < lo || omega_opt > hi,
        iterations: best.iterations,
    })
}

/// Ordinary least-squares line through (η_e, ω_opt) points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

pub fn regress_omega_opt(points: &[(f64, f64)]) -> Result<Regression> {
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            required: 3,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 * mx.abs().max(1.0) || points.iter().all(|p| p.0 == points[0].0) {
        return Err(Error::DegenerateX);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let s2 = if points.len() > 2 {
        sse / (n - 2.0)
    } else {
        0.0
    };
    Ok(Regression {
        slope,
        intercept,
        r2,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        n: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::logspace;

    fn meta() -> ProfileMeta {
        ProfileMeta {
            eta_e: 1.0,
            eta_r: 1.0,
            bandwidth: 24e6,
            duration: 20.0,
        }
    }

    fn synthetic(a: f64, k: f64, e1: f64, e2: f64) -> DnpProfile {
        let m = meta();
        let pts = logspace(5.0, 5000.0, 30)
            .into_iter()
            .map(|w| (w, model_signal(w, a, k, e1, e2, &m, TunnelingLaw::Paper)))
            .collect();
        DnpProfile::new(pts, m).unwrap()
    }

    #[test]
    fn noiseless_round_trip() {
        let (a, k, e1, e2) = (3.0, 300.0, 50e3, 25e3);
        let f = fit_profile(&synthetic(a, k, e1, e2), None).unwrap();
        for (got, want) in [
            (f.amplitude, a),
            (f.kappa_e_fit, k),
            (f.eps1_fit, e1),
            (f.eps2_fit, e2),
        ] {
            assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
        }
        assert!(f.eps2_fit <= f.eps1_fit);
        assert!(!f.extrapolated);
    }

    #[test]
    fn amplitude_scaling_invariance() {
        let p = synthetic(1.0, 300.0, 50e3, 25e3);
        let f1 = fit_profile(&p, None).unwrap();
        let f2 = fit_profile(&p.scaled(1e4).unwrap(), None).unwrap();
        assert!((f2.amplitude / f1.amplitude / 1e4 - 1.0).abs() < 1e-6);
        for (x, y) in [
            (f1.kappa_e_fit, f2.kappa_e_fit),
            (f1.eps1_fit, f2.eps1_fit),
            (f1.eps2_fit, f2.eps2_fit),
            (f1.omega_opt, f2.omega_opt),
        ] {
            assert!((x / y - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic() {
        let p = synthetic(1.0, 300.0, 50e3, 25e3);
        assert_eq!(
            fit_profile(&p, None).unwrap(),
            fit_profile(&p, None).unwrap()
        );
    }

    #[test]
    fn monotone_profile_flagged() {
        let pts: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64 * 10.0, i as f64)).collect();
        let p = DnpProfile::new(pts, meta()).unwrap();
        let f = fit_profile(&p, None).unwrap();
        assert!(f.extrapolated);
    }

    #[test]
    fn profile_validation() {
        let m = meta();
        assert!(DnpProfile::new(vec![(1.0, 1.0); 3], m).is_err());
        let pts = vec![(1.0, 1.0), (2.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(DnpProfile::new(pts, m).is_err());
    }

    #[test]
    fn profile_csv_round_trip() {
        let p = synthetic(1.0, 300.0, 50e3, 25e3);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = DnpProfile::read_csv(buf.as_slice(), meta()).unwrap();
        for (a, b) in p.points().iter().zip(q.points()) {
            assert!((a.0 / b.0 - 1.0).abs() < 1e-11 && (a.1 - b.1).abs() <= 1e-11 * a.1.abs());
        }
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 10.0 * i as f64 + 3.0)).collect();
        let r = regress_omega_opt(&pts).unwrap();
        assert!((r.slope - 10.0).abs() < 1e-12);
        assert!((r.intercept - 3.0).abs() < 1e-12);
        assert!((r.r2 - 1.0).abs() < 1e-12);
        assert!(r.slope_se < 1e-6);
    }

    #[test]
    fn regression_errors() {
        assert!(matches!(
            regress_omega_opt(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            regress_omega_opt(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]),
            Err(Error::DegenerateX)
        ));
    }
}
