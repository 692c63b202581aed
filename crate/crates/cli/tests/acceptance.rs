//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary (`harness = false`).

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use spin_ratchet::buildup::{injection_rate, simulate_buildup, small_time_injection_rate};
use spin_ratchet::cascade::conditional_gaps;
use spin_ratchet::fit::{fit_profile_with, model_signal, FitOptions, Weighting};
use spin_ratchet::optimize::logspace;
use spin_ratchet::ratchet::{buildup_rate_with, find_omega_opt_with, DEFAULT_OMEGA_WINDOW};
use spin_ratchet::{
    analytic_cascade, galton_board_sweep, lz_reference_probability, nuclear_frequencies,
    per_sweep_polarization, propagate_sweep, regress_omega_opt, sweep_transition_matrix,
    DnpProfile, DriveConfig, GaltonMode, HyperfineCoupling, PhysicalConstants, ProfileMeta,
    PropagationPolicy, RatchetParams, RateChainParams, ResetMode, SpinSystem, SweepConfig,
    TunnelingLaw,
};
use spin_ratchet_cli::{config, run_regimes, RegimesStudy};

type Outcome = Result<String, String>;
/// Name, runtime budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn system(couplings: &[(f64, f64)]) -> SpinSystem {
    let nuclei = couplings
        .iter()
        .map(|&(a, b)| HyperfineCoupling::new(a, b).unwrap())
        .collect();
    SpinSystem::new(PhysicalConstants::default(), 0.036, nuclei).unwrap()
}

fn transition_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (t1, t2): (f64, f64) = (rng.random(), rng.random());
        let m = sweep_transition_matrix(t1, t2).map_err(|e| e.to_string())?;
        for row in m.rows() {
            worst = worst.max((row[0] + row[1] - 1.0).abs());
        }
        let closed = 4.0 * t1 * (1.0 - t1) * (1.0 - t2);
        worst = worst
            .max((per_sweep_polarization(t1, t2) - closed).abs())
            .max((m.column_difference() - closed).abs());
    }
    check(
        worst <= 1e-12,
        format!("max deviation {worst:.1e} over 10^4 pairs"),
    )
}

fn galton_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let law = TunnelingLaw::Paper;
    for _ in 0..100 {
        let s = system(&[(
            rng.random_range(100e3..800e3),
            rng.random_range(10e3..300e3),
        )]);
        let d = DriveConfig::from_rates(0.0, rng.random_range(5e3..150e3)).unwrap();
        let omega_r = 10f64.powf(rng.random_range(0.0..4.0));
        let bandwidth = rng.random_range(5e6..50e6);
        let cascade = analytic_cascade(&s, &d).map_err(|e| e.to_string())?;
        let (conserve, flip) = conditional_gaps(&s, &d, 0).map_err(|e| e.to_string())?;
        let t1 = law.probability(flip, omega_r, bandwidth).unwrap();
        let t2 = law.probability(conserve, omega_r, bandwidth).unwrap();
        let m = sweep_transition_matrix(t1, t2).unwrap();
        for (row, start) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let out =
                galton_board_sweep(&cascade, omega_r, bandwidth, start, GaltonMode::Exact, law)
                    .map_err(|e| e.to_string())?;
            let nuc = out.nuclear();
            worst = worst
                .max((nuc[0] - m.get(row, 0)).abs())
                .max((nuc[1] - m.get(row, 1)).abs());
        }
    }
    check(
        worst <= 1e-12,
        format!("max deviation {worst:.1e} over 100 settings"),
    )
}

fn landau_zener_oracle() -> Outcome {
    let s = system(&[]);
    let velocity = 2.4e9;
    let bandwidth = 12e6;
    let sweep =
        SweepConfig::new(s.electron_resonance(), bandwidth, velocity / bandwidth, 1.0).unwrap();
    let mut worst = 0.0f64;
    for target in [0.01f64, 0.05, 0.2, 0.5, 0.8, 0.95, 0.99] {
        // Invert exp(−π²ε²/v) for the gap that gives `target`.
        let eps = (-target.ln() * velocity).sqrt() / std::f64::consts::PI;
        let d = DriveConfig::from_rates(0.0, eps).unwrap();
        let steps = PropagationPolicy::minimum_steps(&s, &d, &sweep);
        let policy = PropagationPolicy::new(steps, ResetMode::Full, 1).unwrap();
        let r = propagate_sweep(&s, &d, &sweep, &policy).map_err(|e| e.to_string())?;
        let stayed = 1.0 - r.final_snapshot().excited;
        let want = lz_reference_probability(eps, velocity);
        worst = worst.max((stayed - want).abs());
    }
    check(
        worst < 0.01,
        format!("max |P_num - P_LZ| = {worst:.2e} for P in [0.01, 0.99]"),
    )
}

fn sequential_traversal() -> Outcome {
    let s = system(&[(1e6, 150e3)]);
    let d = DriveConfig::from_rates(0.0, 40e3).unwrap();
    let bandwidth = 3e6;
    let cascade = analytic_cascade(&s, &d).map_err(|e| e.to_string())?;
    let largest_gap = cascade.lacs().iter().map(|l| l.gap).fold(0.0, f64::max);
    let separation = cascade
        .lacs()
        .windows(2)
        .map(|w| w[1].location - w[0].location)
        .fold(f64::INFINITY, f64::min);
    if separation <= 10.0 * largest_gap || bandwidth <= 10.0 * largest_gap {
        return Err(format!(
            "setup violates separation {separation:.0} > 10 eps {largest_gap:.0}"
        ));
    }
    // Interference between the two paths through the cascade makes the
    // single-sweep result oscillate in 1/ω_r with period B/(ω₀·ω₁); average
    // over one period, sampled evenly, as the sequential model does.
    let (w0, w1) = nuclear_frequencies(&s, 0).unwrap();
    let period = bandwidth / (w0 * w1);
    let samples = 8;
    let law = TunnelingLaw::Standard;
    let runs: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let omega_r = 1.0 / (1.0 / 88.0 + period * k as f64 / samples as f64);
            let sweep = SweepConfig::new(s.electron_resonance(), bandwidth, omega_r, 1.0)?;
            let steps = PropagationPolicy::minimum_steps(&s, &d, &sweep);
            let policy = PropagationPolicy::new(steps, ResetMode::Full, 1)?;
            let r = propagate_sweep(&s, &d, &sweep, &policy)?;
            let g = galton_board_sweep(
                &cascade,
                omega_r,
                bandwidth,
                &[0.5, 0.5],
                GaltonMode::Exact,
                law,
            )?;
            Ok((r.final_snapshot().adiabatic_basis(0), g.polarization(0)))
        })
        .collect::<spin_ratchet::Result<_>>()
        .map_err(|e| e.to_string())?;
    let prop = runs.iter().map(|r| r.0).sum::<f64>() / samples as f64;
    let galton = runs.iter().map(|r| r.1).sum::<f64>() / samples as f64;
    let rel = (prop - galton).abs() / galton.abs();
    check(
        rel < 0.02,
        format!("propagated {prop:.5} vs Galton {galton:.5}, relative {rel:.2e}; separation/eps = {:.1}", separation / largest_gap),
    )
}

fn single_interior_maximum() -> Outcome {
    let law = TunnelingLaw::Paper;
    let cases = [
        (200.0, 50e3, 15e3),
        (300.0, 50e3, 25e3),
        (20.0, 100e3, 10e3),
        (5000.0, 30e3, 29e3),
        (1500.0, 150e3, 12e3),
    ];
    let mut worst = 0.0f64;
    for (kappa_e, eps1, eps2) in cases {
        let p = RatchetParams::new(kappa_e, eps1, eps2, 24e6, 20.0).unwrap();
        let rate = |w: f64| buildup_rate_with(w, &p, law);
        let probe = logspace(1e-2, 1e8, 10_000);
        let vals: Vec<f64> = probe.iter().map(|&w| rate(w)).collect();
        let signs: Vec<i8> = vals
            .windows(2)
            .filter_map(|v| {
                let d = v[1] - v[0];
                (d != 0.0).then_some(if d > 0.0 { 1 } else { -1 })
            })
            .collect();
        let peaks = signs.windows(2).filter(|s| s[0] > 0 && s[1] < 0).count();
        let valleys = signs.windows(2).filter(|s| s[0] < 0 && s[1] > 0).count();
        if peaks != 1 || valleys != 0 {
            return Err(format!(
                "({kappa_e}, {eps1}, {eps2}): {peaks} maxima, {valleys} minima"
            ));
        }
        let opt = find_omega_opt_with(&p, DEFAULT_OMEGA_WINDOW, law).map_err(|e| e.to_string())?;
        let brute = logspace(DEFAULT_OMEGA_WINDOW.0, DEFAULT_OMEGA_WINDOW.1, 1_000_000)
            .into_iter()
            .fold((0.0, f64::NEG_INFINITY), |b, w| {
                let v = rate(w);
                if v > b.1 {
                    (w, v)
                } else {
                    b
                }
            })
            .0;
        worst = worst.max((opt / brute - 1.0).abs());
    }
    check(
        worst < 1e-3,
        format!("5 settings, one maximum each; max |opt/brute - 1| = {worst:.1e}"),
    )
}

fn regimes_config(kappa_d: Option<f64>) -> config::StudyConfig {
    let chain = kappa_d
        .map(|k| format!("[chain]\nkappa_d = {k}\n"))
        .unwrap_or_default();
    let text = format!(
        r#"
        [system]
        b0 = 0.036
        nuclei = [{{ a_par = 200e3, a_perp = 100e3 }}]
        [drive]
        c_e = 300.0
        c_r = 50e3
        [sweep]
        bandwidth = 24e6
        duration = 20.0
        {chain}
        [grids]
        omega_r_log = {{ min = 1.0, max = 1e5, points = 41 }}
        eta_e = [0.4, 2.0, 5.0, 10.0, 15.0, 20.8]
        eta_r = [0.5, 1.5, 3.0, 4.5]
        [regimes]
        fit = false
        "#
    );
    config::parse(&text, false).unwrap()
}

fn slopes_of(study: &RegimesStudy) -> Result<Vec<(f64, f64)>, String> {
    if !study.failures.is_empty() {
        return Err(format!("{} cell failures", study.failures.len()));
    }
    study
        .slopes
        .iter()
        .map(|s| match (s.slope, s.slope_se) {
            (Some(v), Some(e)) => Ok((v, e)),
            _ => Err(format!("regime eta_r = {} has no slope", s.eta_r)),
        })
        .collect()
}

fn lockstep() -> Outcome {
    let study = run_regimes(&regimes_config(None)).map_err(|e| e.to_string())?;
    for k in 0..study.slopes.len() {
        let pts = study.omega_opts(k);
        if pts.windows(2).any(|w| w[1].1 < w[0].1 * (1.0 - 1e-6)) {
            return Err(format!(
                "omega_opt decreases with pumping in regime {k}: {pts:?}"
            ));
        }
    }
    let slopes = slopes_of(&study)?;
    let v: Vec<String> = slopes.iter().map(|s| format!("{:.2}", s.0)).collect();
    check(
        slopes.windows(2).all(|w| w[1].0 > w[0].0),
        format!("no-diffusion slopes (Hz/W) by eta_r: [{}]", v.join(", ")),
    )
}

fn diffusion_plateau() -> Outcome {
    let study = run_regimes(&regimes_config(Some(0.1))).map_err(|e| e.to_string())?;
    let s = slopes_of(&study)?;
    let joint = |a: (f64, f64), b: (f64, f64)| (a.1 * a.1 + b.1 * b.1).sqrt();
    let n = s.len();
    let top_agree = (s[n - 1].0 - s[n - 2].0).abs() <= joint(s[n - 1], s[n - 2]);
    let low_differ = (0..n - 2).all(|k| (s[k + 1].0 - s[k].0).abs() > joint(s[k], s[k + 1]));
    let v: Vec<String> = s.iter().map(|x| format!("{:.2}±{:.2}", x.0, x.1)).collect();
    check(
        top_agree && low_differ,
        format!("finite-diffusion slopes: [{}]", v.join(", ")),
    )
}

fn fit_recovery() -> Outcome {
    let meta = ProfileMeta {
        eta_e: 1.0,
        eta_r: 1.0,
        bandwidth: 24e6,
        duration: 20.0,
    };
    let (k, e1, e2) = (300.0, 50e3, 25e3);
    let law = TunnelingLaw::Paper;
    let truth = RatchetParams::new(k, e1, e2, meta.bandwidth, meta.duration).unwrap();
    let w_true = find_omega_opt_with(&truth, DEFAULT_OMEGA_WINDOW, law).unwrap();
    let grid = logspace(5.0, 5000.0, 30);
    let opts = FitOptions {
        weighting: Weighting::Relative,
        ..FitOptions::default()
    };
    let errors: Vec<[f64; 4]> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.02).unwrap();
            let pts = grid
                .iter()
                .map(|&w| {
                    (
                        w,
                        model_signal(w, 1.0, k, e1, e2, &meta, law)
                            * (1.0 + noise.sample(&mut rng)),
                    )
                })
                .collect();
            let f = fit_profile_with(&DnpProfile::new(pts, meta)?, None, &opts)?;
            Ok([
                (f.kappa_e_fit / k - 1.0).abs(),
                (f.eps1_fit / e1 - 1.0).abs(),
                (f.eps2_fit / e2 - 1.0).abs(),
                (f.omega_opt / w_true - 1.0).abs(),
            ])
        })
        .collect::<spin_ratchet::Result<_>>()
        .map_err(|e| e.to_string())?;
    let p90: Vec<f64> = (0..4)
        .map(|i| {
            let mut v: Vec<f64> = errors.iter().map(|e| e[i]).collect();
            v.sort_by(f64::total_cmp);
            v[89]
        })
        .collect();
    check(
        p90[0] < 0.1 && p90[1] < 0.1 && p90[2] < 0.1 && p90[3] < 0.05,
        format!(
            "90th-percentile errors: kappa_e {:.3}, eps1 {:.3}, eps2 {:.3}, omega_opt {:.3}",
            p90[0], p90[1], p90[2], p90[3]
        ),
    )
}

fn buildup_linearity() -> Outcome {
    let s = system(&[(200e3, 100e3)]);
    let drive = DriveConfig::new(0.0, 3.0, 10.0, 50e3).unwrap();
    let (eps1, eps2) = conditional_gaps(&s, &drive, 0).unwrap();
    let omega_r = 1000.0;
    let gamma = injection_rate(eps1, eps2, omega_r, 24e6, TunnelingLaw::Paper).unwrap();
    let powers = [0.4, 2.0, 5.0, 10.0, 15.0, 20.8];
    let mut pts = Vec::new();
    for eta_e in powers {
        let kappa_e = drive.with_powers(eta_e, 3.0).unwrap().kappa_e();
        if kappa_e / omega_r >= 0.3 {
            return Err(format!(
                "kappa_e/omega_r = {} is not small",
                kappa_e / omega_r
            ));
        }
        let chain = RateChainParams::new(kappa_e, gamma, None, 300.0, 1.0, 100.0, omega_r).unwrap();
        let series = simulate_buildup(&chain, 1.0, 1e-3).map_err(|e| e.to_string())?;
        pts.push((
            eta_e,
            small_time_injection_rate(&series, 0.6).map_err(|e| e.to_string())?,
        ));
    }
    let r = regress_omega_opt(&pts).map_err(|e| e.to_string())?;
    check(
        r.r2 > 0.99,
        format!("6 powers, slope vs eta_e R^2 = {:.5}", r.r2),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ratchet");
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small_propagate = tmp.path().join("propagate.toml");
    std::fs::write(
        &small_propagate,
        std::fs::read_to_string(root.join("propagate.toml"))
            .unwrap()
            .replace("omega_r = 88.0", "omega_r = 5000.0"),
    )
    .unwrap();
    let runs = [
        ("profile", root.join("profile.toml")),
        ("regimes", root.join("regimes.toml")),
        ("buildup", root.join("buildup.toml")),
        ("propagate", small_propagate),
        ("validate", root.join("profile.toml")),
    ];
    let mut compared = 0;
    for (cmd, cfg) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{cmd}_{rep}"));
            let r = Command::new(bin)
                .args([*cmd, "--svg", "--seed", "7", "--config"])
                .arg(cfg)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !r.status.success() {
                return Err(format!(
                    "{cmd} failed: {}",
                    String::from_utf8_lossy(&r.stderr)
                ));
            }
            outputs.push(out);
        }
        for f in walk(&outputs[0]) {
            let rel = f.strip_prefix(&outputs[0]).unwrap().to_path_buf();
            if rel == Path::new("manifest.json") {
                continue;
            }
            let a = std::fs::read(&f).unwrap();
            let b = std::fs::read(outputs[1].join(&rel))
                .map_err(|_| format!("{cmd}: {} missing", rel.display()))?;
            if a != b {
                return Err(format!("{cmd}: {} differs", rel.display()));
            }
            compared += 1;
        }
        if walk(&outputs[0]).len() != walk(&outputs[1]).len() {
            return Err(format!("{cmd}: file sets differ"));
        }
    }
    Ok(format!(
        "5 commands x 2 runs, {compared} files byte-identical (manifest wall time excluded)"
    ))
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v.sort();
    v
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("transition-matrix identities", 1, transition_identities),
        (
            "Galton board vs closed-form probabilities",
            1,
            galton_equivalence,
        ),
        (
            "propagator vs Landau-Zener formula",
            60,
            landau_zener_oracle,
        ),
        (
            "sequential traversal: propagator vs Galton board",
            300,
            sequential_traversal,
        ),
        (
            "buildup-rate shape and optimum search",
            10,
            single_interior_maximum,
        ),
        ("lockstep: slopes rise with microwave power", 30, lockstep),
        (
            "diffusion plateau at high microwave power",
            120,
            diffusion_plateau,
        ),
        ("fit recovery under 2% noise", 60, fit_recovery),
        ("buildup linearity in optical power", 10, buildup_linearity),
        ("CLI determinism", 60, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = f();
        let elapsed = t0.elapsed();
        let over = elapsed > Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {budget} s budget")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {name} [{:.2} s / {budget} s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
