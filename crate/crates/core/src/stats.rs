//! Time-series diagnostics and descriptive statistics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lag count used for daily-return series of roughly one trading year.
pub const DEFAULT_LJUNG_BOX_LAGS: usize = 10;

pub fn mse(sim: &[f64], reference: &[f64]) -> Result<f64> {
    if sim.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            found: sim.len(),
        });
    }
    if sim.is_empty() {
        return Err(Error::Degenerate("empty series".into()));
    }
    let sum: f64 = sim.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / sim.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn centered(series: &[f64]) -> Vec<f64> {
    let m = mean(series);
    series.iter().map(|x| x - m).collect()
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// Sample autocorrelations at lags `1..=max_lag`.
pub fn autocorrelations(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let c = centered(series);
    let denom = sum_sq(&c);
    if !(denom > 0.0) {
        return Err(Error::Degenerate("zero-variance series".into()));
    }
    Ok((1..=max_lag)
        .map(|j| c[j..].iter().zip(&c[..c.len() - j]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
}

/// Portmanteau test of H0: no autocorrelation up to `lags`.
///
/// `Q = T (T + 2) sum_j rho_j^2 / (T - j)`, compared against a chi-square
/// with `lags` degrees of freedom.
pub fn ljung_box(series: &[f64], lags: usize) -> Result<LjungBox> {
    let t = series.len();
    if lags < 1 || t <= lags {
        return Err(Error::param(format!("need T > lags >= 1, got T = {t}, lags = {lags}")));
    }
    let rho = autocorrelations(series, lags)?;
    let tf = t as f64;
    let q = tf
        * (tf + 2.0)
        * rho
            .iter()
            .enumerate()
            .map(|(i, r)| r * r / (tf - (i + 1) as f64))
            .sum::<f64>();
    Ok(LjungBox {
        statistic: q,
        p_value: chi_square_sf(q, lags as f64),
        lags,
    })
}

/// Durbin-Watson statistic of the mean-centred series.
pub fn durbin_watson(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::param("Durbin-Watson needs at least 2 points"));
    }
    let c = centered(series);
    let denom = sum_sq(&c);
    if !(denom > 0.0) {
        return Err(Error::Degenerate("zero-variance series".into()));
    }
    let num: f64 = c.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Standard deviation with the `1/(T-1)` normalisation.
    pub std: f64,
    /// `m3 / m2^(3/2)`; `None` for zero variance.
    pub skewness: Option<f64>,
    /// `m4 / m2^2 - 3`; `None` for zero variance.
    pub excess_kurtosis: Option<f64>,
}

pub fn sample_moments(series: &[f64]) -> Result<Moments> {
    let n = series.len();
    if n < 4 {
        return Err(Error::param(format!("need at least 4 points, got {n}")));
    }
    let nf = n as f64;
    let m = mean(series);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in series {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0))
    } else {
        (None, None)
    };
    Ok(Moments {
        mean: m,
        std,
        skewness,
        excess_kurtosis,
    })
}

/// Silverman's rule-of-thumb bandwidth `1.06 sigma T^(-1/5)`.
pub fn silverman_bandwidth(series: &[f64]) -> Result<f64> {
    let m = sample_moments(series)?;
    if !(m.std > 0.0) {
        return Err(Error::Degenerate("zero-variance series".into()));
    }
    Ok(1.06 * m.std * (series.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn density_estimate(series: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 10 {
        return Err(Error::param(format!("need at least 10 points, got {}", series.len())));
    }
    let h = silverman_bandwidth(series)?;
    let norm = 1.0 / (series.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            norm * series
                .iter()
                .map(|&xi| (-0.5 * ((x - xi) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    pub mse: f64,
    pub ljung_box_stat: f64,
    pub ljung_box_pvalue: f64,
    pub dw: f64,
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

pub fn diagnose(sim: &[f64], reference: &[f64], lags: usize) -> Result<SeriesDiagnostics> {
    let lb = ljung_box(sim, lags)?;
    let m = sample_moments(sim)?;
    Ok(SeriesDiagnostics {
        mse: mse(sim, reference)?,
        ljung_box_stat: lb.statistic,
        ljung_box_pvalue: lb.p_value,
        dw: durbin_watson(sim)?,
        mean: m.mean,
        std: m.std,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
    })
}

// ---------------------------------------------------------------------------
// Incomplete gamma and the chi-square tail
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        let a = LANCZOS[1..]
            .iter()
            .enumerate()
            .fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + (i + 1) as f64));
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, x)`.
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularised lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularised upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    regularized_gamma_q(dof / 2.0, x / 2.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn mse_examples() {
        let x = vec![0.1, -0.2, 0.3];
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let a = vec![0.0; 100];
        let b = vec![0.01; 100];
        assert!((mse(&a, &b).unwrap() - 1e-4).abs() < 1e-18);
        assert!((mse(&[0.0, 0.1], &[0.1, 0.0]).unwrap() - 0.01).abs() < 1e-17);
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn chi_square_against_statrs() {
        for &dof in &[1.0, 2.0, 5.0, 10.0, 30.0] {
            let reference = ChiSquared::new(dof).unwrap();
            for &x in &[0.01, 0.5, 1.0, 3.0, 9.0, 10.0, 11.0, 25.0, 60.0] {
                let ours = chi_square_sf(x, dof);
                let theirs = 1.0 - reference.cdf(x);
                // relative accuracy where the tail is representable
                let tol = 1e-10 * theirs.max(1e-300) + 1e-15;
                assert!(
                    (ours - theirs).abs() <= tol.max(1e-14),
                    "dof {dof} x {x}: {ours} vs {theirs}"
                );
            }
        }
    }

    #[test]
    fn incomplete_gamma_identities() {
        // P(1, x) = 1 - e^-x
        for &x in &[0.1, 1.0, 2.5, 10.0] {
            assert!((regularized_gamma_p(1.0, x) - (1.0 - (-x).exp())).abs() < 1e-14);
            assert!((regularized_gamma_q(1.0, x) - (-x).exp()).abs() < 1e-14 * (-x).exp().max(1e-3));
        }
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        // deep tail keeps relative precision
        let q = regularized_gamma_q(5.0, 200.0);
        let expected =
            (-200.0f64).exp() * (1.0 + 200.0 + 200f64.powi(2) / 2.0 + 200f64.powi(3) / 6.0 + 200f64.powi(4) / 24.0);
        assert!(((q - expected) / expected).abs() < 1e-10);
    }

    #[test]
    fn ljung_box_white_noise_mostly_accepts() {
        let accepted = (0..100)
            .filter(|&s| ljung_box(&normals(251, s), 10).unwrap().p_value >= 0.05)
            .count();
        assert!(accepted >= 90, "{accepted}");
    }

    #[test]
    fn ljung_box_trend_rejects() {
        let trend: Vec<f64> = (0..251).map(|t| t as f64).collect();
        let lb = ljung_box(&trend, 10).unwrap();
        assert!(lb.p_value < 1e-6);
        // oracle: reference chi-square implementation on our statistic
        let oracle = 1.0 - ChiSquared::new(10.0).unwrap().cdf(lb.statistic);
        assert!((lb.p_value - oracle).abs() < 1e-12);
    }

    #[test]
    fn ljung_box_errors() {
        assert!(ljung_box(&[1.0; 20], 5).is_err());
        assert!(ljung_box(&[1.0, 2.0, 3.0], 3).is_err());
        assert!(ljung_box(&[1.0, 2.0, 3.0], 0).is_err());
    }

    #[test]
    fn ljung_box_statistic_by_hand() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        // mean 3.5, deviations -2.5 -0.5 -1.5 1.5 0.5 2.5, denom 17.5
        let r1 = (1.25 + 0.75 - 2.25 + 0.75 + 1.25) / 17.5;
        let r2 = (3.75 - 0.75 - 0.75 + 3.75) / 17.5;
        let q = 6.0 * 8.0 * (r1 * r1 / 5.0 + r2 * r2 / 4.0);
        let lb = ljung_box(&x, 2).unwrap();
        assert!((lb.statistic - q).abs() < 1e-12);
    }

    #[test]
    fn ljung_box_pvalues_uniform_under_null() {
        let below = (0..1000)
            .filter(|&s| ljung_box(&normals(251, 10_000 + s), 10).unwrap().p_value < 0.05)
            .count() as f64
            / 1000.0;
        assert!((0.03..=0.08).contains(&below), "{below}");
    }

    #[test]
    fn durbin_watson_examples() {
        let alternating: Vec<f64> = (0..10_000).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((durbin_watson(&alternating).unwrap() - 4.0).abs() < 1e-3);
        let in_band = (0..100)
            .filter(|&s| {
                let dw = durbin_watson(&normals(251, s)).unwrap();
                dw > 1.75 && dw < 2.25
            })
            .count();
        assert!(in_band >= 90, "{in_band}");
        assert!(durbin_watson(&[2.0; 5]).is_err());
        assert!(durbin_watson(&[2.0]).is_err());
    }

    #[test]
    fn moments_examples() {
        let c = sample_moments(&[3.0; 6]).unwrap();
        assert_eq!(c.mean, 3.0);
        assert_eq!(c.std, 0.0);
        assert!(c.skewness.is_none() && c.excess_kurtosis.is_none());
        let m = sample_moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.0);
        assert!((m.std - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(sample_moments(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn normal_moments() {
        let m = sample_moments(&normals(100_000, 3)).unwrap();
        assert!(m.skewness.unwrap().abs() < 0.05);
        assert!(m.excess_kurtosis.unwrap().abs() < 0.1);
    }

    #[test]
    fn kde_integrates_and_is_symmetric() {
        let mut xs = normals(2000, 8);
        xs.extend(xs.clone().iter().map(|x| -x));
        let m = sample_moments(&xs).unwrap();
        let grid: Vec<f64> = (0..=1200)
            .map(|i| -6.0 * m.std + i as f64 * 12.0 * m.std / 1200.0)
            .collect();
        let dens = density_estimate(&xs, &grid).unwrap();
        assert!(dens.iter().all(|&d| d >= 0.0));
        let integral: f64 = grid
            .windows(2)
            .zip(dens.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum();
        assert!((0.98..=1.01).contains(&integral), "{integral}");
        for i in 0..600 {
            assert!((dens[i] - dens[1200 - i]).abs() < 1e-10);
        }
        assert!(density_estimate(&[1.0; 20], &grid).is_err());
        assert!(density_estimate(&xs[..5], &grid).is_err());
    }

    #[test]
    fn ks_detects_mismatch() {
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&u, |x| x) < 1e-3);
        assert!(ks_statistic(&u, |x| x * x) > 0.2);
    }

    proptest! {
        #[test]
        fn mse_symmetric_nonnegative(a in proptest::collection::vec(-1.0f64..1.0, 1..50), shift in -0.5f64..0.5) {
            let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let ab = mse(&a, &b).unwrap();
            prop_assert_eq!(ab, mse(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, shift == 0.0 || a.iter().zip(&b).all(|(x, y)| x == y));
        }

        #[test]
        fn dw_negation_and_reversal(xs in proptest::collection::vec(-1.0f64..1.0, 3..60)) {
            prop_assume!(sample_moments(&xs).map(|m| m.std > 1e-6).unwrap_or(false));
            let dw = durbin_watson(&xs).unwrap();
            let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
            let rev: Vec<f64> = xs.iter().rev().copied().collect();
            prop_assert!((dw - durbin_watson(&neg).unwrap()).abs() < 1e-12);
            prop_assert!((dw - durbin_watson(&rev).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=4.0).contains(&dw));
        }
    }
}
