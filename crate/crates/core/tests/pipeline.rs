use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spin_ratchet::buildup::{chain_gaps, simulate_buildup, small_time_injection_rate, BulkModel};
use spin_ratchet::fit::{fit_profile_with, model_signal, FitOptions, Weighting};
use spin_ratchet::optimize::logspace;
use spin_ratchet::ratchet::total_polarization_with;
use spin_ratchet::{
    bulk_profile, DnpProfile, DriveConfig, HyperfineCoupling, PhysicalConstants, ProfileMeta,
    RatchetParams, RateChainParams, SpinSystem, SweepConfig, TunnelingLaw,
};

fn system() -> SpinSystem {
    SpinSystem::new(
        PhysicalConstants::default(),
        0.036,
        vec![HyperfineCoupling::new(200e3, 100e3).unwrap()],
    )
    .unwrap()
}

#[test]
fn unbottlenecked_bulk_profile_peaks_with_analytic_profile() {
    let s = system();
    let d = DriveConfig::new(2.0, 3.0, 300.0, 50e3).unwrap();
    let sweep = SweepConfig::new(s.electron_resonance(), 24e6, 100.0, 20.0).unwrap();
    // Huge bulk pool keeps the chain far from saturation.
    let chain = RateChainParams::new(0.0, 0.0, None, f64::INFINITY, 1.0, 1e7, 1.0).unwrap();
    let grid = logspace(1.0, 1e5, 301);
    let law = TunnelingLaw::Paper;
    let bulk = bulk_profile(&s, &d, &sweep, &grid, &chain, 20.0, law).unwrap();
    let (eps1, eps2) = chain_gaps(&s, &d).unwrap();
    let params = RatchetParams::new(d.kappa_e(), eps1, eps2, 24e6, 20.0).unwrap();
    let analytic: Vec<(f64, f64)> = grid
        .iter()
        .map(|&w| (w, total_polarization_with(&params, w, law)))
        .collect();
    let analytic = DnpProfile::new(analytic, *bulk.meta()).unwrap();
    let idx = |p: &DnpProfile| {
        let at = p.argmax().0;
        grid.iter().position(|&w| w == at).unwrap() as i64
    };
    assert!((idx(&bulk) - idx(&analytic)).abs() <= 1);
}

#[test]
fn diffusion_bottleneck_lowers_and_shifts_the_profile() {
    let s = system();
    let d = DriveConfig::new(10.0, 4.5, 300.0, 50e3).unwrap();
    let free = RateChainParams::new(0.0, 0.0, None, 300.0, 1.0, 100.0, 1.0).unwrap();
    let slow = RateChainParams::new(0.0, 0.0, Some(0.1), 300.0, 1.0, 100.0, 1.0).unwrap();
    let law = TunnelingLaw::Paper;
    let m_free = BulkModel::from_system(&s, &d, 24e6, &free, 20.0, law).unwrap();
    let m_slow = BulkModel::from_system(&s, &d, 24e6, &slow, 20.0, law).unwrap();
    let w_free = m_free.omega_opt((1.0, 1e5), 64).unwrap();
    let w_slow = m_slow.omega_opt((1.0, 1e5), 64).unwrap();
    assert!(m_slow.bulk_at(w_slow).unwrap() < m_free.bulk_at(w_free).unwrap());
    assert!(w_slow < w_free, "{w_slow} vs {w_free}");
}

fn synthetic(seed: u64, grid: &[f64], meta: &ProfileMeta) -> DnpProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let pts = grid
        .iter()
        .map(|&w| {
            let m = model_signal(w, 1.0, 300.0, 50e3, 25e3, meta, TunnelingLaw::Paper);
            (w, m * (1.0 + noise.sample(&mut rng)))
        })
        .collect();
    DnpProfile::new(pts, *meta).unwrap()
}

#[test]
fn noisy_profiles_fit_close_to_truth() {
    let meta = ProfileMeta {
        eta_e: 1.0,
        eta_r: 1.0,
        bandwidth: 24e6,
        duration: 20.0,
    };
    let grid = logspace(5.0, 5000.0, 30);
    let opts = FitOptions {
        weighting: Weighting::Relative,
        ..FitOptions::default()
    };
    for seed in 0..10 {
        let f = fit_profile_with(&synthetic(seed, &grid, &meta), None, &opts).unwrap();
        assert!((f.kappa_e_fit / 300.0 - 1.0).abs() < 0.1);
        assert!((f.eps1_fit / 50e3 - 1.0).abs() < 0.1);
        assert!((f.eps2_fit / 25e3 - 1.0).abs() < 0.1);
        assert!(f.eps2_fit <= f.eps1_fit);
        assert!(!f.extrapolated);
    }
}

#[test]
fn system_gaps_survive_profile_round_trip() {
    let s = system();
    let d = DriveConfig::new(1.0, 1.0, 300.0, 50e3).unwrap();
    let (eps1, eps2) = chain_gaps(&s, &d).unwrap();
    let meta = ProfileMeta {
        eta_e: 1.0,
        eta_r: 1.0,
        bandwidth: 24e6,
        duration: 20.0,
    };
    let pts = logspace(1.0, 1e4, 40)
        .into_iter()
        .map(|w| {
            (
                w,
                model_signal(w, 1.0, 300.0, eps1, eps2, &meta, TunnelingLaw::Paper),
            )
        })
        .collect();
    let p = DnpProfile::new(pts, meta).unwrap();
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let back = DnpProfile::read_csv(buf.as_slice(), meta).unwrap();
    let f = fit_profile_with(&back, None, &FitOptions::default()).unwrap();
    assert!((f.eps1_fit / eps1 - 1.0).abs() < 1e-3);
    assert!((f.eps2_fit / eps2 - 1.0).abs() < 1e-3);
}

#[test]
fn injection_slope_grows_with_pumping() {
    let slope = |kappa_e: f64| {
        let p = RateChainParams::new(kappa_e, 30.0, Some(5.0), 300.0, 1.0, 100.0, 1000.0).unwrap();
        small_time_injection_rate(&simulate_buildup(&p, 1.0, 0.001).unwrap(), 0.6).unwrap()
    };
    let (lo, hi) = (slope(4.0), slope(208.0));
    assert!(lo > 0.0 && hi > 10.0 * lo);
}
