//! Heavy-tailed return universes from coupled chaotic maps, and detection of
//! the statistical factors that emerge from them.
//!
//! The pipeline:
//!
//! 1. [`local_map`]: a per-asset Bernoulli-shift map whose invariant law is
//!    the hyperbolic-secant density.
//! 2. [`network`]: block Laplacian of `M` clusters hidden by a random rotation.
//! 3. [`simulator`]: the coupled iteration producing `T x K` return panels.
//! 4. [`factor_analysis`]: PCA spectra, factor counting against the uncoupled
//!    noise floor, OLS loadings, loading entropy and explained variance.
//! 5. [`experiments`]: ensemble sweeps over `(M, eps)`, calibration grids and
//!    estimator sampling studies.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod factor_analysis;
pub mod io;
pub mod linalg;
pub mod local_map;
pub mod network;
pub mod par;
pub mod seeds;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use factor_analysis::{
    analyze_panel, baseline_spectrum, detect_factors, pca_spectrum, DetectionMode, FactorFit, SpectrumReport,
};
pub use local_map::LocalMapParams;
pub use network::{build_coupling, CouplingNetwork, NetworkParams};
pub use simulator::{simulate_panel, BoundaryPolicy, ReturnPanel, SimConfig};
