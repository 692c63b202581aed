//! Sequential-crossing ("Galton board") model of one sweep.
//!
//! A walker starts in some |e, c⟩ state and meets the anti-crossings in sweep
//! order. At a crossing that involves its current state it stays on the
//! diabatic branch with probability T(gap) and swaps to the partner state
//! with probability 1 − T(gap). Crossings that do not involve the walker's
//! state leave it untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::LacCascade;
use crate::error::{Error, Result};
use crate::ratchet::TunnelingLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaltonMode {
    /// Forward probability flow, no sampling noise.
    Exact,
    /// Independent walkers; walker k draws from its own ChaCha stream so the
    /// result does not depend on the thread schedule.
    MonteCarlo { trials: usize, seed: u64 },
}

/// Final occupation of each |e, c⟩ state, index e·2ᴺ + c.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaltonOutcome {
    pub states: Vec<f64>,
    pub n_nuclei: usize,
    /// Walker count for Monte Carlo runs.
    pub trials: Option<usize>,
}

impl GaltonOutcome {
    /// Occupation of each nuclear configuration, summed over both electron
    /// manifolds (upper-manifold states counted in their own tilted basis).
    pub fn nuclear(&self) -> Vec<f64> {
        let half = 1usize << self.n_nuclei;
        (0..half)
            .map(|c| self.states[c] + self.states[half + c])
            .collect()
    }

    pub fn electron_excited(&self) -> f64 {
        let half = 1usize << self.n_nuclei;
        self.states[half..].iter().sum()
    }

    /// P(nucleus j up) − P(nucleus j down).
    pub fn polarization(&self, j: usize) -> f64 {
        self.nuclear()
            .iter()
            .enumerate()
            .map(|(c, p)| if c >> j & 1 == 1 { *p } else { -*p })
            .sum()
    }

    /// Binomial standard error of a Monte Carlo occupation `p`.
    pub fn standard_error(&self, p: f64) -> Option<f64> {
        self.trials
            .map(|n| (p * (1.0 - p) / n as f64).max(0.0).sqrt())
    }
}

/// Runs one sweep through `cascade` (which must be sorted by location, as
/// [`LacCascade`] guarantees).
///
/// `initial` is either a distribution over the 2ᴺ nuclear configurations
/// with the electron in m_s = 0, or over all 2ᴺ⁺¹ states.
pub fn galton_board_sweep(
    cascade: &LacCascade,
    omega_r: f64,
    bandwidth: f64,
    initial: &[f64],
    mode: GaltonMode,
    law: TunnelingLaw,
) -> Result<GaltonOutcome> {
    let n = cascade.n_nuclei();
    let half = 1usize << n;
    let mut start = vec![0.0; 2 * half];
    if initial.len() == half {
        start[..half].copy_from_slice(initial);
    } else if initial.len() == 2 * half {
        start.copy_from_slice(initial);
    } else {
        return Err(Error::InvalidParameter(format!(
            "initial distribution has {} entries, expected {} or {}",
            initial.len(),
            half,
            2 * half
        )));
    }
    let total: f64 = start.iter().sum();
    if start.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "initial distribution must be non-negative and sum to 1".into(),
        ));
    }

    // (state a, state b, diabatic probability)
    let steps: Vec<(usize, usize, f64)> = cascade
        .lacs()
        .iter()
        .map(|l| {
            let t = if l.degenerate {
                1.0
            } else {
                law.probability(l.gap, omega_r, bandwidth)?
            };
            Ok((l.lower, half + l.upper, t))
        })
        .collect::<Result<_>>()?;

    match mode {
        GaltonMode::Exact => {
            let mut p = start;
            for &(a, b, t) in &steps {
                let (pa, pb) = (p[a], p[b]);
                p[a] = t * pa + (1.0 - t) * pb;
                p[b] = t * pb + (1.0 - t) * pa;
            }
            Ok(GaltonOutcome {
                states: p,
                n_nuclei: n,
                trials: None,
            })
        }
        GaltonMode::MonteCarlo { trials, seed } => {
            if trials == 0 {
                return Err(Error::InvalidParameter("trials must be at least 1".into()));
            }
            let cdf: Vec<f64> = start
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let counts = (0..trials)
                .into_par_iter()
                .fold(
                    || vec![0u64; 2 * half],
                    |mut acc, k| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(k as u64);
                        let u: f64 = rng.random::<f64>() * total;
                        let mut s = cdf.partition_point(|&c| c <= u).min(2 * half - 1);
                        for &(a, b, t) in &steps {
                            if s == a || s == b {
                                let r: f64 = rng.random();
                                if r >= t {
                                    s = if s == a { b } else { a };
                                }
                            }
                        }
                        acc[s] += 1;
                        acc
                    },
                )
                .reduce(
                    || vec![0u64; 2 * half],
                    |mut a, b| {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                        a
                    },
                );
            Ok(GaltonOutcome {
                states: counts.iter().map(|&c| c as f64 / trials as f64).collect(),
                n_nuclei: n,
                trials: Some(trials),
            })
        }
    }
}
