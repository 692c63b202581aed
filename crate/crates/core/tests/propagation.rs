use spin_ratchet::cascade::conditional_gaps;
use spin_ratchet::{
    analytic_cascade, galton_board_sweep, lz_reference_probability, propagate_sweep,
    sweep_transition_matrix, DriveConfig, GaltonMode, HyperfineCoupling, PhysicalConstants,
    PropagationPolicy, ResetMode, SpinSystem, SweepConfig, TunnelingLaw,
};

fn system(couplings: &[(f64, f64)]) -> SpinSystem {
    let nuclei = couplings
        .iter()
        .map(|&(a, b)| HyperfineCoupling::new(a, b).unwrap())
        .collect();
    SpinSystem::new(PhysicalConstants::default(), 0.036, nuclei).unwrap()
}

#[test]
fn isolated_crossing_matches_landau_zener() {
    // Bare electron: the only crossing is at resonance with gap Ω.
    let s = system(&[]);
    let velocity = 2.4e9;
    let bandwidth = 8e6;
    let sweep =
        SweepConfig::new(s.electron_resonance(), bandwidth, velocity / bandwidth, 1.0).unwrap();
    for eps in [10e3, 30e3, 60e3] {
        let d = DriveConfig::from_rates(0.0, eps).unwrap();
        let steps = PropagationPolicy::minimum_steps(&s, &d, &sweep);
        let policy = PropagationPolicy::new(steps, ResetMode::Full, 1).unwrap();
        let r = propagate_sweep(&s, &d, &sweep, &policy).unwrap();
        let stayed = 1.0 - r.final_snapshot().excited;
        let want = lz_reference_probability(eps, velocity);
        assert!(
            (stayed - want).abs() < 0.01,
            "eps {eps}: {stayed} vs {want}"
        );
    }
}

fn single_nucleus_run(steps: usize) -> f64 {
    let s = system(&[(1e6, 150e3)]);
    let d = DriveConfig::from_rates(0.0, 40e3).unwrap();
    let sweep = SweepConfig::new(s.electron_resonance(), 3e6, 5000.0, 1.0).unwrap();
    assert!(PropagationPolicy::minimum_steps(&s, &d, &sweep) <= steps);
    let policy = PropagationPolicy::new(steps, ResetMode::Full, 2)
        .unwrap()
        .with_initial_polarization(vec![0.3])
        .unwrap();
    let r = propagate_sweep(&s, &d, &sweep, &policy).unwrap();
    for snap in &r.snapshots {
        assert!((snap.trace - 1.0).abs() < 1e-10);
        assert!(snap.iz.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
    r.final_snapshot().iz[0]
}

#[test]
fn halving_the_step_barely_moves_the_result() {
    let coarse = single_nucleus_run(PropagationPolicy::DEFAULT_STEPS);
    let fine = single_nucleus_run(2 * PropagationPolicy::DEFAULT_STEPS);
    assert!(
        (coarse - fine).abs() < 1e-3 * fine.abs(),
        "{coarse} vs {fine}"
    );
}

#[test]
fn galton_exact_flow_reproduces_transition_matrix() {
    let s = system(&[(200e3, 100e3)]);
    let d = DriveConfig::from_rates(0.0, 60e3).unwrap();
    let cascade = analytic_cascade(&s, &d).unwrap();
    let (big, small) = conditional_gaps(&s, &d, 0).unwrap();
    let (w, b) = (120.0, 24e6);
    let law = TunnelingLaw::Paper;
    // T₁ belongs to the flipping gap, T₂ to the conserving one.
    let t1 = law.probability(small, w, b).unwrap();
    let t2 = law.probability(big, w, b).unwrap();
    let m = sweep_transition_matrix(t1, t2).unwrap();
    for (start, row) in [([1.0, 0.0], 0), ([0.0, 1.0], 1)] {
        let out = galton_board_sweep(&cascade, w, b, &start, GaltonMode::Exact, law).unwrap();
        let nuc = out.nuclear();
        assert!((nuc[0] - m.get(row, 0)).abs() < 1e-12);
        assert!((nuc[1] - m.get(row, 1)).abs() < 1e-12);
    }
}

#[test]
fn galton_monte_carlo_within_three_standard_errors() {
    let s = system(&[(200e3, 100e3), (-90e3, 60e3)]);
    let d = DriveConfig::from_rates(0.0, 40e3).unwrap();
    let cascade = analytic_cascade(&s, &d).unwrap();
    let init = [0.25; 4];
    let law = TunnelingLaw::Standard;
    let exact = galton_board_sweep(&cascade, 40.0, 24e6, &init, GaltonMode::Exact, law).unwrap();
    let mode = GaltonMode::MonteCarlo {
        trials: 1_000_000,
        seed: 2024,
    };
    let mc = galton_board_sweep(&cascade, 40.0, 24e6, &init, mode, law).unwrap();
    for (p, q) in mc.states.iter().zip(&exact.states) {
        let se = mc.standard_error(*q).unwrap();
        assert!((p - q).abs() <= 3.0 * se + 1e-12, "{p} vs {q} (se {se})");
    }
}
