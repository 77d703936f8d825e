//! Heavy-tailed elliptical factor models: simulation, spurious-eigenvalue
//! detection by fluctuation magnification, and robust factor-number
//! estimation.
//!
//! The crate is organized around the workflow:
//!
//! 1. [`model`] / [`radius`] generate panels Y = Sigma^(1/2) U D with
//!    configurable heavy-tailed radius laws and spiked covariances;
//! 2. [`spectral`] computes sample-covariance spectra through the n x n Gram
//!    matrix and reweights them cheaply for magnification replications;
//! 3. [`magnify`] measures the relative fluctuation of each leading
//!    eigenvalue under mean-one reweighting and flags those that move like
//!    noise-driven outliers rather than factor signals;
//! 4. [`estimators`] combines the detector with a gap-ratio baseline into a
//!    corrected factor-count estimate;
//! 5. [`oracles`] provides closed-form and fixed-point reference quantities
//!    (spike locations, limiting variances, outlier positions);
//! 6. [`harness`] runs seed-stable Monte Carlo experiments and [`panel`]
//!    applies the same machinery to real data over rolling windows.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod magnify;
pub mod model;
pub mod oracles;
pub mod panel;
pub mod radius;
pub mod seeding;
pub mod spectral;

pub use error::{EfmError, Result};
pub use estimators::{
    estimate_factors, onatski_estimate, second_round_estimate, FactorEstimate, Method,
    NoFlagPolicy,
};
pub use magnify::{
    detect_spurious, detect_spurious_panel, fluctuation_statistic, magnifier_bounds,
    threshold_value, DetectionReport, MagnificationConfig, MagnifierBounds, MagnifierMode,
    ThresholdPolicy, WeightLaw,
};
pub use model::{generate_panel, sample_unit_sphere, PanelMatrix, PopulationModel, Provenance};
pub use oracles::{
    clt_variance, magnifier_constant, predict_outlier, q_regularizer, solve_consistent_system,
    spurious_location, theta_fixed_point, zeta_fixed_point, ConsistentSystem, SystemPoint,
};
pub use radius::{radius_moment, sample_radius_squared, RadiusLaw, TailFamily};
pub use spectral::{
    gap_ratios, gram_matrix, magnified_spectrum, spectrum, EigenBackend, GramCache, Spectrum,
};
