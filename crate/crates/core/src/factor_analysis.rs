//! Principal components, noise-floor factor counting, OLS loadings, loading
//! entropy and explained variance.
//!
//! The number of factors is the count of spectrum ranks at which the coupled
//! system's normalised eigenvalue exceeds that of the uncoupled system run
//! with the same map, dimensions and horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use crate::seeds::{derive_seed, stream};
use crate::simulator::{simulate_uncoupled, ReturnPanel, SimConfig};

/// Attempts per baseline realisation before giving up on unstable panels.
pub const MAX_BASELINE_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    /// Eigenvalues divided by their sum.
    pub normalized: DVector<f64>,
    /// Unit eigenvectors as columns, aligned with `eigenvalues`. `None` for
    /// rank-wise averages of several spectra, which have no single basis.
    pub components: Option<DMatrix<f64>>,
}

impl SpectrumReport {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Builds a report from raw eigenvalues (sorted here, descending).
    pub fn from_eigenvalues(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        let eigenvalues = DVector::from_vec(v);
        let normalized = normalize(&eigenvalues)?;
        Ok(Self {
            eigenvalues,
            normalized,
            components: None,
        })
    }

    /// Flat spectrum `1/K` at every rank.
    pub fn uniform(k: usize) -> Self {
        Self {
            eigenvalues: DVector::from_element(k, 1.0),
            normalized: DVector::from_element(k, 1.0 / k as f64),
            components: None,
        }
    }
}

fn normalize(eigenvalues: &DVector<f64>) -> Result<DVector<f64>> {
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("spectrum has zero total variance".into()));
    }
    Ok(eigenvalues / total)
}

/// Panel with every column's mean removed.
pub fn centered_returns(panel: &ReturnPanel) -> DMatrix<f64> {
    let mut x = panel.returns.clone();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    x
}

/// Eigen-decomposition of the sample covariance `X^T X / (T - 1)` of the
/// centred panel. PCA on covariance, not correlation: all assets share the
/// same generative scale.
pub fn pca_spectrum(panel: &ReturnPanel) -> Result<SpectrumReport> {
    if !panel.stable {
        return Err(Error::Degenerate("panel is unstable".into()));
    }
    if panel.steps() < 2 || panel.assets() < 1 {
        return Err(Error::Degenerate(format!(
            "panel of shape {}x{} is too small",
            panel.steps(),
            panel.assets()
        )));
    }
    let x = centered_returns(panel);
    let cov = x.tr_mul(&x) / (panel.steps() as f64 - 1.0);
    let (mut values, components) = symmetric_eigen_desc(&cov)?;
    // Round-off can leave null directions slightly negative.
    values.apply(|v| *v = v.max(0.0));
    let normalized = normalize(&values)?;
    Ok(SpectrumReport {
        eigenvalues: values,
        normalized,
        components: Some(components),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Count every rank where the coupled spectrum is strictly above the floor.
    #[default]
    Heaviside,
    /// Count only the initial run of exceedances.
    LeadingRun,
}

pub fn detect_factors(coupled: &SpectrumReport, baseline: &SpectrumReport, mode: DetectionMode) -> Result<usize> {
    if coupled.len() != baseline.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            found: coupled.len(),
        });
    }
    let above = coupled
        .normalized
        .iter()
        .zip(baseline.normalized.iter())
        .map(|(c, b)| c > b);
    Ok(match mode {
        DetectionMode::Heaviside => above.filter(|&x| x).count(),
        DetectionMode::LeadingRun => above.take_while(|&x| x).count(),
    })
}

/// Rank-wise mean of several spectra of equal length.
pub fn mean_spectrum(reports: &[SpectrumReport]) -> Result<SpectrumReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::param("at least one spectrum is required"))?;
    let k = first.len();
    let mut eig = DVector::zeros(k);
    let mut norm = DVector::zeros(k);
    for r in reports {
        if r.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: r.len(),
            });
        }
        eig += &r.eigenvalues;
        norm += &r.normalized;
    }
    let n = reports.len() as f64;
    Ok(SpectrumReport {
        eigenvalues: eig / n,
        normalized: norm / n,
        components: if reports.len() == 1 {
            first.components.clone()
        } else {
            None
        },
    })
}

/// Noise floor: rank-wise mean of `n_baseline` uncoupled spectra sharing the
/// map, dimensions and horizon of `cfg`.
///
/// Realisation `i` uses the seed derived from `(cfg.sim_seed, BASELINE, i,
/// attempt)`; an unstable panel is redrawn with the next attempt.
pub fn baseline_spectrum(cfg: &SimConfig, n_baseline: usize) -> Result<SpectrumReport> {
    if n_baseline < 1 {
        return Err(Error::param("n_baseline must be at least 1"));
    }
    let mut spectra = Vec::with_capacity(n_baseline);
    for i in 0..n_baseline {
        spectra.push(baseline_realization(cfg, i)?);
    }
    mean_spectrum(&spectra)
}

fn baseline_realization(cfg: &SimConfig, index: usize) -> Result<SpectrumReport> {
    for attempt in 0..MAX_BASELINE_ATTEMPTS {
        let mut c = *cfg;
        c.epsilon = 0.0;
        c.sim_seed = derive_seed(cfg.sim_seed, &[stream::BASELINE, index as u64, attempt as u64]);
        let panel = simulate_uncoupled(&c)?;
        if panel.stable {
            return pca_spectrum(&panel);
        }
    }
    Err(Error::Unstable {
        attempts: MAX_BASELINE_ATTEMPTS,
    })
}

/// OLS of each centred asset on the factor scores.
///
/// Solved through a thin QR factorisation of the `T x M` score matrix.
/// Returns the `M x K` loadings and `T x K` residuals.
pub fn fit_loadings(panel: &ReturnPanel, factors: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    fit_loadings_centered(&centered_returns(panel), factors)
}

fn fit_loadings_centered(x: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (t, m) = factors.shape();
    if t != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: t,
        });
    }
    if m == 0 {
        return Err(Error::param("at least one factor is required"));
    }
    if t < m {
        return Err(Error::Degenerate(format!("{m} factors but only {t} observations")));
    }
    let qr = factors.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if !(diag_max > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
        return Err(Error::Degenerate("factor matrix is rank deficient".into()));
    }
    let qtx = qr.q().tr_mul(x);
    let loadings = r
        .solve_upper_triangular(&qtx)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let residuals = x - factors * &loadings;
    Ok((loadings, residuals))
}

/// `alpha_m = |beta_m| / sum |beta|`; `None` when every loading is zero.
pub fn factor_weights(loadings_column: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = loadings_column.iter().map(|b| b.abs()).sum();
    (total > 0.0).then(|| loadings_column.iter().map(|b| b.abs() / total).collect())
}

/// Normalised Shannon entropy of an asset's loadings, in `[0, 1]`.
///
/// Absolute loadings are normalised into weights (signed loadings would not
/// form a probability vector). Undefined for a single factor, where
/// `log(M) = 0`, and for an all-zero column.
pub fn loading_entropy(loadings_column: &[f64]) -> Option<f64> {
    let m = loadings_column.len();
    if m < 2 {
        return None;
    }
    let alpha = factor_weights(loadings_column)?;
    let h: f64 = alpha.iter().filter(|&&a| a > 0.0).map(|a| -a * a.ln()).sum();
    Some((h / (m as f64).ln()).clamp(0.0, 1.0))
}

/// Share of total variance carried by the top `m_hat` components.
pub fn explained_variance(spectrum: &SpectrumReport, m_hat: usize) -> Result<f64> {
    if m_hat > spectrum.len() {
        return Err(Error::param(format!(
            "m_hat {m_hat} exceeds spectrum length {}",
            spectrum.len()
        )));
    }
    Ok(spectrum.normalized.iter().take(m_hat).sum::<f64>().clamp(0.0, 1.0))
}

/// Fitted factor model `r_t = B f_t + xi_t` for one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub m_hat: usize,
    /// `T x M` principal-component scores.
    pub factors: DMatrix<f64>,
    /// `M x K` OLS loadings.
    pub loadings: DMatrix<f64>,
    /// `M x K` normalised absolute loadings; each column sums to 1.
    pub weights: DMatrix<f64>,
    /// Per-asset entropy; `None` where undefined.
    pub entropy: Vec<Option<f64>>,
    pub explained_variance: f64,
    /// `T x K` part of the centred panel not explained by the factors.
    pub residuals: DMatrix<f64>,
    pub spectrum: SpectrumReport,
}

/// Mean and population standard deviation of the defined entropies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub mean: f64,
    pub std: f64,
    pub defined: usize,
}

impl FactorFit {
    pub fn entropy_summary(&self) -> Option<EntropySummary> {
        let defined: Vec<f64> = self.entropy.iter().flatten().copied().collect();
        if defined.is_empty() {
            return None;
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
        Some(EntropySummary {
            mean,
            std: var.sqrt(),
            defined: defined.len(),
        })
    }
}

/// Full pipeline: spectrum, factor count, scores, loadings, entropy and
/// explained variance.
pub fn analyze_panel(panel: &ReturnPanel, baseline: &SpectrumReport, mode: DetectionMode) -> Result<FactorFit> {
    let spectrum = pca_spectrum(panel)?;
    let m_hat = detect_factors(&spectrum, baseline, mode)?;
    let (t, k) = panel.returns.shape();
    let x = centered_returns(panel);
    let components = spectrum.components.as_ref().expect("pca_spectrum keeps components");
    let factors = &x * components.columns(0, m_hat);

    let (loadings, residuals) = if m_hat == 0 {
        (DMatrix::zeros(0, k), x.clone())
    } else {
        fit_loadings_centered(&x, &factors)?
    };

    let mut weights = DMatrix::zeros(m_hat, k);
    let mut entropy = Vec::with_capacity(k);
    for j in 0..k {
        let column: Vec<f64> = loadings.column(j).iter().copied().collect();
        if let Some(alpha) = factor_weights(&column) {
            weights.set_column(j, &DVector::from_vec(alpha));
        }
        entropy.push(loading_entropy(&column));
    }
    let explained_variance = explained_variance(&spectrum, m_hat)?;
    debug_assert_eq!(factors.shape(), (t, m_hat));
    Ok(FactorFit {
        m_hat,
        factors,
        loadings,
        weights,
        entropy,
        explained_variance,
        residuals,
        spectrum,
    })
}
