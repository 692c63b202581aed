//! Swept-microwave spin-ratchet model for optically pumped dynamic nuclear
//! polarization in an NV-centre / ¹³C central-spin system.
//!
//! The crate is organised along the model pipeline:
//!
//! - [`system`]: domain types, constants and unit conventions (all Hz).
//! - [`cascade`]: rotating-frame Hamiltonian and the Landau-Zener
//!   anti-crossing cascade it produces.
//! - [`ratchet`]: closed-form tunneling probabilities, per-sweep transfer,
//!   buildup rate and the optimal sweep rate.
//! - [`galton`] and [`propagator`]: stochastic sequential-crossing model and
//!   exact density-matrix propagation used to check it.
//! - [`buildup`]: electron / proximal / bulk compartment model.
//! - [`fit`]: profile fitting and ω_opt regression.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buildup;
pub mod cascade;
pub mod error;
pub mod fit;
pub mod galton;
pub mod linalg;
pub mod optimize;
pub mod propagator;
pub mod ratchet;
pub mod system;

pub use buildup::{
    bulk_profile, electron_polarization, simulate_buildup, small_time_injection_rate,
    BuildupSeries, BulkModel, RateChainParams,
};
pub use cascade::{
    analytic_cascade, build_hamiltonian, locate_lacs, nuclear_frequencies, Lac, LacCascade,
};
pub use error::{Error, Result};
pub use fit::{fit_profile, regress_omega_opt, DnpProfile, FitResult, ProfileMeta, Regression};
pub use galton::{galton_board_sweep, GaltonMode, GaltonOutcome};
pub use linalg::HermitianMatrix;
pub use propagator::{
    lz_reference_probability, propagate_sweep, NuclearPolarizationRecord, PropagationPolicy,
    ResetMode,
};
pub use ratchet::{
    buildup_rate, find_omega_opt, per_sweep_polarization, sweep_transition_matrix,
    total_polarization, tunneling_probability, RatchetParams, SweepTransitionMatrix, TunnelingLaw,
};
pub use system::{
    validate_system, DriveConfig, HyperfineCoupling, PhysicalConstants, SpinSystem, SweepConfig,
    ValidationReport, ValidationWarning,
};
