use rayon::prelude::*;
use serde::Serialize;
use spin_ratchet::buildup::{
    chain_gaps, injection_rate, percent_per_second, simulate_buildup, small_time_injection_rate,
    BulkModel,
};
use spin_ratchet::fit::{fit_profile_with, FitOptions};
use spin_ratchet::ratchet::{find_omega_opt_with, total_polarization_with, DEFAULT_OMEGA_WINDOW};
use spin_ratchet::{
    analytic_cascade, galton_board_sweep, propagate_sweep, regress_omega_opt, validate_system,
    DnpProfile, DriveConfig, FitResult, GaltonMode, PropagationPolicy, RatchetParams, Regression,
    SpinSystem, ValidationReport,
};

use crate::config::StudyConfig;
use crate::error::CliError;
use crate::output::Output;
use crate::plot::{Plot, Series, XScale};

/// Settings that apply to every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub svg: bool,
}

fn cfg_err(key: &str) -> impl FnOnce(spin_ratchet::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{key}: {e}"))
}

fn require<T: Copy>(key: &str, v: Option<T>) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

fn profile_grid(cfg: &StudyConfig) -> Result<Vec<f64>, CliError> {
    let g = cfg.omega_grid()?;
    if g.len() < 5 {
        return Err(CliError::Config(format!(
            "`grids.omega_r` needs at least 5 points, got {}",
            g.len()
        )));
    }
    Ok(g)
}

/// Large and small gap: explicit `[gaps]` or the first nucleus of the system.
fn gaps(
    cfg: &StudyConfig,
    system: &SpinSystem,
    drive: &DriveConfig,
) -> Result<(f64, f64), CliError> {
    match &cfg.gaps {
        Some(g) => Ok((g.eps1, g.eps2)),
        None => chain_gaps(system, drive).map_err(cfg_err("system.nuclei")),
    }
}

fn write_svg(out: &mut Output, rel: &str, plot: Plot) -> Result<(), CliError> {
    out.write_bytes(rel, plot.render().as_bytes())
}

#[derive(Serialize)]
struct OmegaOptNote {
    kappa_e: f64,
    eps1: f64,
    eps2: f64,
    analytic_omega_opt: Option<f64>,
    analytic_inside_grid: bool,
    analytic_error: Option<String>,
    bulk_omega_opt: Option<f64>,
    bulk_error: Option<String>,
    gap_warning: Option<String>,
}

pub fn cmd_profile(cfg: &StudyConfig, out: &mut Output, opts: RunOptions) -> Result<(), CliError> {
    let grid = profile_grid(cfg)?;
    let system = cfg.spin_system()?;
    let drive = cfg.drive()?;
    let chain = cfg.chain()?;
    let (eps1, eps2) = gaps(cfg, &system, &drive)?;
    let law = cfg.tunneling_law;
    let params = RatchetParams::new(
        drive.kappa_e(),
        eps1,
        eps2,
        cfg.sweep.bandwidth,
        cfg.sweep.duration,
    )
    .map_err(cfg_err("profile"))?;
    if let Some(w) = params.gap_order_warning() {
        eprintln!("warning: {w}");
    }

    let analytic: Vec<(f64, f64)> = grid
        .iter()
        .map(|&w| (w, total_polarization_with(&params, w, law)))
        .collect();
    let meta = spin_ratchet::ProfileMeta {
        eta_e: drive.eta_e(),
        eta_r: drive.eta_r(),
        bandwidth: cfg.sweep.bandwidth,
        duration: cfg.sweep.duration,
    };
    let analytic = DnpProfile::new(analytic, meta)?;
    out.write_with("profile_analytic.csv", |b| Ok(analytic.write_csv(b)?))?;

    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let mut note = OmegaOptNote {
        kappa_e: drive.kappa_e(),
        eps1,
        eps2,
        analytic_omega_opt: None,
        analytic_inside_grid: false,
        analytic_error: None,
        bulk_omega_opt: None,
        bulk_error: None,
        gap_warning: params.gap_order_warning(),
    };
    match find_omega_opt_with(&params, DEFAULT_OMEGA_WINDOW, law) {
        Ok(w) => {
            note.analytic_omega_opt = Some(w);
            note.analytic_inside_grid = (lo..=hi).contains(&w);
        }
        Err(e) => note.analytic_error = Some(e.to_string()),
    }

    let bulk = if cfg.profile.bulk {
        let model = BulkModel {
            eps1,
            eps2,
            kappa_e: drive.kappa_e(),
            bandwidth: cfg.sweep.bandwidth,
            chain,
            duration: cfg.sweep.duration,
            law,
        };
        let prof = model.profile(&grid, drive.eta_e(), drive.eta_r())?;
        out.write_with("profile_bulk.csv", |b| Ok(prof.write_csv(b)?))?;
        match model.omega_opt((lo, hi), cfg.regimes.per_decade) {
            Ok(w) => note.bulk_omega_opt = Some(w),
            Err(e) => note.bulk_error = Some(e.to_string()),
        }
        Some(prof)
    } else {
        None
    };
    out.write_json("omega_opt.json", &note)?;

    if opts.svg {
        let norm = |p: &DnpProfile| {
            let m = p.argmax().1;
            let s = if m > 0.0 { m } else { 1.0 };
            p.points()
                .iter()
                .map(|&(w, v)| (w, v / s))
                .collect::<Vec<_>>()
        };
        let a = norm(&analytic);
        let b = bulk.as_ref().map(norm);
        let mut series = vec![Series {
            label: "analytic".into(),
            points: &a,
        }];
        if let Some(b) = &b {
            series.push(Series {
                label: "bulk".into(),
                points: b,
            });
        }
        write_svg(
            out,
            "profile.svg",
            Plot {
                title: "Sweep-rate profile",
                x_label: "sweep rate (Hz, square-root axis)",
                y_label: "signal / max",
                x_scale: XScale::Sqrt,
                series,
            },
        )?;
    }
    Ok(())
}

/// One (η_e, η_r) point of a regimes study.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub eta_e: f64,
    pub eta_r: f64,
    pub kappa_e: f64,
    pub rabi: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub profile: Option<DnpProfile>,
    pub omega_opt: Option<f64>,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub cell: usize,
    pub eta_e: f64,
    pub eta_r: f64,
    pub stage: &'static str,
    pub error: String,
}

/// ω_opt(η_e) regression for one η_r regime.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeSlope {
    pub eta_r: f64,
    pub points: usize,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub degenerate: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RegimesStudy {
    /// Ordered by η_r, then η_e.
    pub cells: Vec<Cell>,
    pub slopes: Vec<RegimeSlope>,
    pub failures: Vec<Failure>,
}

impl RegimesStudy {
    /// ω_opt values of regime `k` in η_e order, skipping failed cells.
    pub fn omega_opts(&self, k: usize) -> Vec<(f64, f64)> {
        let eta_r = self.slopes[k].eta_r;
        self.cells
            .iter()
            .filter(|c| c.eta_r == eta_r)
            .filter_map(|c| c.omega_opt.map(|w| (c.eta_e, w)))
            .collect()
    }
}

fn regime_slope(eta_r: f64, pts: &[(f64, f64)]) -> RegimeSlope {
    let mut s = RegimeSlope {
        eta_r,
        points: pts.len(),
        slope: None,
        slope_se: None,
        intercept: None,
        r2: None,
        degenerate: false,
        note: None,
    };
    match regress_omega_opt(pts) {
        Ok(Regression {
            slope,
            intercept,
            r2,
            slope_se,
            ..
        }) => {
            s.slope = Some(slope);
            s.slope_se = Some(slope_se);
            s.intercept = Some(intercept);
            s.r2 = Some(r2);
        }
        Err(e) => {
            s.degenerate = true;
            s.note = Some(e.to_string());
        }
    }
    s
}

/// Computes every cell of a regimes study in parallel; results come back in
/// grid order regardless of scheduling.
pub fn run_regimes(cfg: &StudyConfig) -> Result<RegimesStudy, CliError> {
    let grid = profile_grid(cfg)?;
    let eta_e = cfg.eta_e_grid()?;
    let eta_r = cfg.eta_r_grid()?;
    let system = cfg.spin_system()?;
    let drive = cfg.drive()?;
    let chain = cfg.chain()?;
    if cfg.gaps.is_none() && system.n_nuclei() == 0 {
        return Err(CliError::Config(
            "regimes needs `system.nuclei` or an explicit `[gaps]` block".into(),
        ));
    }
    let window = (grid[0], grid[grid.len() - 1]);
    let fit_opts = FitOptions {
        law: cfg.tunneling_law,
        ..FitOptions::default()
    };
    let jobs: Vec<(usize, f64, f64)> = eta_r
        .iter()
        .flat_map(|&r| eta_e.iter().map(move |&e| (e, r)))
        .enumerate()
        .map(|(i, (e, r))| (i, e, r))
        .collect();

    let results: Vec<(Cell, Vec<Failure>)> = jobs
        .par_iter()
        .map(|&(index, ee, er)| {
            let mut failures = Vec::new();
            let fail = |stage, e: &dyn std::fmt::Display| Failure {
                cell: index,
                eta_e: ee,
                eta_r: er,
                stage,
                error: e.to_string(),
            };
            let mut cell = Cell {
                index,
                eta_e: ee,
                eta_r: er,
                kappa_e: 0.0,
                rabi: 0.0,
                eps1: f64::NAN,
                eps2: f64::NAN,
                profile: None,
                omega_opt: None,
                fit: None,
            };
            let d = match drive.with_powers(ee, er) {
                Ok(d) => d,
                Err(e) => {
                    failures.push(fail("drive", &e));
                    return (cell, failures);
                }
            };
            cell.kappa_e = d.kappa_e();
            cell.rabi = d.rabi();
            let model = gaps(cfg, &system, &d).map(|(eps1, eps2)| BulkModel {
                eps1,
                eps2,
                kappa_e: d.kappa_e(),
                bandwidth: cfg.sweep.bandwidth,
                chain,
                duration: cfg.sweep.duration,
                law: cfg.tunneling_law,
            });
            let model = match model {
                Ok(m) => m,
                Err(e) => {
                    failures.push(fail("gaps", &e));
                    return (cell, failures);
                }
            };
            cell.eps1 = model.eps1;
            cell.eps2 = model.eps2;
            match model.profile(&grid, ee, er) {
                Ok(p) => cell.profile = Some(p),
                Err(e) => failures.push(fail("profile", &e)),
            }
            match model.omega_opt(window, cfg.regimes.per_decade) {
                Ok(w) => cell.omega_opt = Some(w),
                Err(e) => failures.push(fail("omega_opt", &e)),
            }
            if cfg.regimes.fit {
                if let Some(p) = &cell.profile {
                    match fit_profile_with(p, None, &fit_opts) {
                        Ok(f) => cell.fit = Some(f),
                        Err(e) => failures.push(fail("fit", &e)),
                    }
                }
            }
            (cell, failures)
        })
        .collect();

    let mut cells = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (c, f) in results {
        cells.push(c);
        failures.extend(f);
    }
    let slopes = eta_r
        .iter()
        .map(|&r| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.eta_r == r)
                .filter_map(|c| c.omega_opt.map(|w| (c.eta_e, w)))
                .collect();
            regime_slope(r, &pts)
        })
        .collect();
    Ok(RegimesStudy {
        cells,
        slopes,
        failures,
    })
}

#[derive(Serialize)]
struct IndexRow {
    cell: usize,
    eta_r: f64,
    eta_e: f64,
    kappa_e_per_s: f64,
    rabi_hz: f64,
    eps1_hz: f64,
    eps2_hz: f64,
    omega_opt_hz: Option<f64>,
    fit_omega_opt_hz: Option<f64>,
    fit_ambiguous: Option<bool>,
    fit_extrapolated: Option<bool>,
    profile_file: Option<String>,
    fit_file: Option<String>,
}

pub fn cmd_regimes(cfg: &StudyConfig, out: &mut Output, opts: RunOptions) -> Result<(), CliError> {
    let study = run_regimes(cfg)?;
    let mut index = Vec::with_capacity(study.cells.len());
    for c in &study.cells {
        let stem = format!("cells/cell_{:03}", c.index);
        let profile_file = match &c.profile {
            Some(p) => {
                let rel = format!("{stem}_profile.csv");
                out.write_with(&rel, |b| Ok(p.write_csv(b)?))?;
                Some(rel)
            }
            None => None,
        };
        let fit_file = match &c.fit {
            Some(f) => {
                let rel = format!("{stem}_fit.json");
                out.write_json(&rel, f)?;
                Some(rel)
            }
            None => None,
        };
        index.push(IndexRow {
            cell: c.index,
            eta_r: c.eta_r,
            eta_e: c.eta_e,
            kappa_e_per_s: c.kappa_e,
            rabi_hz: c.rabi,
            eps1_hz: c.eps1,
            eps2_hz: c.eps2,
            omega_opt_hz: c.omega_opt,
            fit_omega_opt_hz: c.fit.as_ref().map(|f| f.omega_opt),
            fit_ambiguous: c.fit.as_ref().map(|f| f.ambiguous),
            fit_extrapolated: c.fit.as_ref().map(|f| f.extrapolated),
            profile_file,
            fit_file,
        });
    }
    out.write_rows("index.csv", &index)?;
    out.write_rows("slopes.csv", &study.slopes)?;
    out.write_json("failures.json", &study.failures)?;
    for s in study.slopes.iter().filter(|s| s.degenerate) {
        eprintln!(
            "warning: regression for eta_r = {} is degenerate: {}",
            s.eta_r,
            s.note.as_deref().unwrap_or("")
        );
    }
    if !study.failures.is_empty() {
        eprintln!(
            "warning: {} of {} cells reported failures, see failures.json",
            study
                .failures
                .iter()
                .map(|f| f.cell)
                .collect::<std::collections::BTreeSet<_>>()
                .len(),
            study.cells.len()
        );
    }

    if opts.svg {
        let curves: Vec<Vec<(f64, f64)>> = (0..study.slopes.len())
            .map(|k| study.omega_opts(k))
            .collect();
        let series = curves
            .iter()
            .zip(&study.slopes)
            .map(|(p, s)| Series {
                label: format!("eta_r = {}", s.eta_r),
                points: p,
            })
            .collect();
        write_svg(
            out,
            "omega_opt.svg",
            Plot {
                title: "Optimal sweep rate",
                x_label: "eta_e (W)",
                y_label: "omega_opt (Hz)",
                x_scale: XScale::Linear,
                series,
            },
        )?;
        let sl: Vec<(f64, f64)> = study
            .slopes
            .iter()
            .filter_map(|s| s.slope.map(|v| (s.eta_r, v)))
            .collect();
        write_svg(
            out,
            "slopes.svg",
            Plot {
                title: "Ratchet speed-up",
                x_label: "eta_r (W)",
                y_label: "d omega_opt / d eta_e (Hz/W)",
                x_scale: XScale::Linear,
                series: vec![Series {
                    label: "slope".into(),
                    points: &sl,
                }],
            },
        )?;
    }
    if study
        .cells
        .iter()
        .all(|c| c.omega_opt.is_none() && c.profile.is_none())
    {
        return Err(CliError::Model(spin_ratchet::Error::InvalidParameter(
            "every cell failed".into(),
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct InjectionRow {
    eta_e: f64,
    kappa_e_per_s: f64,
    inj_rate_per_s: f64,
    slope_per_s: f64,
    percent_thermal_per_s: f64,
    file: String,
}

pub fn cmd_buildup(cfg: &StudyConfig, out: &mut Output, opts: RunOptions) -> Result<(), CliError> {
    let omega_r = require("buildup.omega_r", cfg.buildup.omega_r)?;
    let eta_e = match &cfg.grids.eta_e {
        Some(_) => cfg.eta_e_grid()?,
        None => vec![require("drive.eta_e", cfg.drive.eta_e)?],
    };
    let system = cfg.spin_system()?;
    let drive = cfg.drive()?;
    let chain = cfg.chain()?;
    let (eps1, eps2) = gaps(cfg, &system, &drive)?;
    let gamma = injection_rate(eps1, eps2, omega_r, cfg.sweep.bandwidth, cfg.tunneling_law)
        .map_err(cfg_err("buildup.omega_r"))?;
    let duration = cfg.buildup.duration.unwrap_or(cfg.sweep.duration);

    let runs = eta_e
        .par_iter()
        .map(|&ee| {
            let d = drive
                .with_powers(ee, drive.eta_r())
                .map_err(cfg_err("grids.eta_e"))?;
            let p = chain.with_rates(d.kappa_e(), gamma, omega_r)?;
            let dt = cfg.buildup.dt.unwrap_or_else(|| p.max_step());
            let series = simulate_buildup(&p, duration, dt)?;
            let slope = small_time_injection_rate(&series, cfg.buildup.window)?;
            Ok((ee, d.kappa_e(), series, slope))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut rows = Vec::with_capacity(runs.len());
    for (i, (ee, k, series, slope)) in runs.iter().enumerate() {
        let file = format!("buildup_{i:02}.csv");
        out.write_with(&file, |b| Ok(series.write_csv(b)?))?;
        rows.push(InjectionRow {
            eta_e: *ee,
            kappa_e_per_s: *k,
            inj_rate_per_s: gamma,
            slope_per_s: *slope,
            percent_thermal_per_s: percent_per_second(*slope, cfg.buildup.thermal_reference),
            file,
        });
    }
    out.write_rows("injection.csv", &rows)?;

    if opts.svg {
        let curves: Vec<Vec<(f64, f64)>> = runs
            .iter()
            .map(|r| {
                r.2.time
                    .iter()
                    .copied()
                    .zip(r.2.bulk.iter().copied())
                    .collect()
            })
            .collect();
        let series = curves
            .iter()
            .zip(&runs)
            .map(|(p, r)| Series {
                label: format!("eta_e = {}", r.0),
                points: p,
            })
            .collect();
        write_svg(
            out,
            "buildup.svg",
            Plot {
                title: "Bulk buildup",
                x_label: "time (s)",
                y_label: "bulk polarization",
                x_scale: XScale::Linear,
                series,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GaltonRow {
    nucleus_index: usize,
    propagated: f64,
    galton_exact: f64,
    galton_monte_carlo: Option<f64>,
    monte_carlo_stderr: Option<f64>,
}

#[derive(Serialize)]
struct PropagateNote {
    omega_r: f64,
    steps_per_sweep: usize,
    minimum_steps: usize,
    sweeps: usize,
}

/// Product distribution over nuclear configurations with the given
/// per-nucleus polarizations (bit set = up).
fn product_distribution(n: usize, pol: &[f64]) -> Vec<f64> {
    (0..1usize << n)
        .map(|c| {
            (0..n)
                .map(|j| {
                    let p = pol.get(j).copied().unwrap_or(0.0);
                    if c >> j & 1 == 1 {
                        (1.0 + p) / 2.0
                    } else {
                        (1.0 - p) / 2.0
                    }
                })
                .product()
        })
        .collect()
}

pub fn cmd_propagate(
    cfg: &StudyConfig,
    out: &mut Output,
    opts: RunOptions,
) -> Result<(), CliError> {
    let omega_r = require("propagate.omega_r", cfg.propagate.omega_r)?;
    let system = cfg.spin_system()?;
    let drive = cfg.drive()?;
    let sweep = cfg.sweep(&system, omega_r)?;
    let minimum = PropagationPolicy::minimum_steps(&system, &drive, &sweep);
    let steps = cfg.propagate.steps_per_sweep.unwrap_or(minimum);
    let policy = cfg.propagation_policy(steps)?;
    let record = propagate_sweep(&system, &drive, &sweep, &policy)?;
    out.write_with("polarization.csv", |b| Ok(record.write_csv(b)?))?;
    out.write_json(
        "propagation.json",
        &PropagateNote {
            omega_r,
            steps_per_sweep: steps,
            minimum_steps: minimum,
            sweeps: policy.sweeps(),
        },
    )?;

    let n = system.n_nuclei();
    if n > 0 {
        let cascade = analytic_cascade(&system, &drive)?;
        out.write_with("lacs.csv", |b| Ok(cascade.write_csv(b)?))?;
        let init = product_distribution(n, policy.initial_polarization());
        let bw = sweep.bandwidth();
        let law = cfg.tunneling_law;
        let exact = galton_board_sweep(&cascade, omega_r, bw, &init, GaltonMode::Exact, law)?;
        let mc = match cfg.propagate.galton_trials {
            0 => None,
            trials => Some(galton_board_sweep(
                &cascade,
                omega_r,
                bw,
                &init,
                GaltonMode::MonteCarlo {
                    trials,
                    seed: cfg.seed,
                },
                law,
            )?),
        };
        let first = &record.snapshots[1.min(record.snapshots.len() - 1)];
        let rows: Vec<GaltonRow> = (0..n)
            .map(|j| {
                let m = mc.as_ref().map(|m| m.polarization(j));
                GaltonRow {
                    nucleus_index: j,
                    propagated: first.adiabatic_basis(j),
                    galton_exact: exact.polarization(j),
                    galton_monte_carlo: m,
                    monte_carlo_stderr: mc.as_ref().and_then(|o| {
                        // Polarization is 2p − 1 of an occupation p.
                        let p = (m? + 1.0) / 2.0;
                        o.standard_error(p).map(|s| 2.0 * s)
                    }),
                }
            })
            .collect();
        out.write_rows("galton.csv", &rows)?;
    }

    if opts.svg && n > 0 {
        let curves: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|j| {
                record
                    .snapshots
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (k as f64, s.iz[j]))
                    .collect()
            })
            .collect();
        let series = curves
            .iter()
            .enumerate()
            .map(|(j, p)| Series {
                label: format!("nucleus {j}"),
                points: p,
            })
            .collect();
        write_svg(
            out,
            "polarization.svg",
            Plot {
                title: "Nuclear polarization per sweep",
                x_label: "sweep",
                y_label: "<2 Iz>",
                x_scale: XScale::Linear,
                series,
            },
        )?;
    }
    Ok(())
}

pub fn cmd_validate(cfg: &StudyConfig, out: &mut Output) -> Result<ValidationReport, CliError> {
    let system = cfg.spin_system()?;
    let drive = cfg.drive()?;
    let omega_r = cfg
        .grids
        .omega_r
        .as_ref()
        .and_then(|g| g.first().copied())
        .or(cfg.propagate.omega_r)
        .unwrap_or(1.0);
    let sweep = cfg.sweep(&system, omega_r)?;
    let report = validate_system(&system, &drive, &sweep);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.write_json("report.json", &report)?;
    Ok(report)
}
