//! Ensemble studies: `(M, eps)` sweeps, the two-point model of the factor
//! count's spread, calibration against an empirical return series, and the
//! sampling distributions of moment estimators.
//!
//! Every task derives its seeds from the base seed and its own grid
//! coordinates, so tasks are independent, can run in any order, and any one
//! record can be reproduced in isolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_analysis::{analyze_panel, baseline_spectrum, DetectionMode};
use crate::local_map::LocalMapParams;
use crate::network::{build_coupling, NetworkParams};
use crate::par::par_map;
use crate::seeds::{derive_seed, stream};
use crate::simulator::{simulate_orbit, simulate_panel, BoundaryPolicy, SimConfig, DEFAULT_BURN_IN, DEFAULT_R_CAP};
use crate::stats::{durbin_watson, ljung_box, mse, sample_moments, DEFAULT_LJUNG_BOX_LAGS};

/// Values snapped to this many decimals when generated from an index.
const GRID_DECIMALS: i32 = 12;

/// A one-dimensional parameter grid, either `start + i * step` for
/// `i in 0..count` or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueGrid {
    Range { start: f64, step: f64, count: usize },
    List(Vec<f64>),
}

impl ValueGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ValueGrid::Range { start, step, count } => {
                let scale = 10f64.powi(GRID_DECIMALS);
                (0..*count)
                    .map(|i| ((start + i as f64 * step) * scale).round() / scale)
                    .collect()
            }
            ValueGrid::List(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ValueGrid::Range { count, .. } => *count,
            ValueGrid::List(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

fn default_m_values() -> Vec<usize> {
    (1..=6).collect()
}
fn default_epsilon_grid() -> ValueGrid {
    ValueGrid::Range {
        start: 0.2,
        step: 0.01,
        count: 51,
    }
}
fn default_n_per_cluster() -> usize {
    10
}
fn default_reps() -> usize {
    200
}
fn default_steps() -> usize {
    251
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}
fn default_n_baseline() -> usize {
    1
}
fn default_r_cap() -> f64 {
    DEFAULT_R_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "default_epsilon_grid")]
    pub epsilon_grid: ValueGrid,
    #[serde(default = "default_n_per_cluster")]
    pub n_per_cluster: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_steps", rename = "t")]
    pub steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_n_baseline")]
    pub n_baseline: usize,
    #[serde(default)]
    pub map: LocalMapParams,
    #[serde(default = "default_r_cap")]
    pub r_cap: f64,
    /// Reuse one network per `(M, eps)` instead of drawing one per repetition.
    #[serde(default)]
    pub fix_network: bool,
    #[serde(default)]
    pub detection: DetectionMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_values: default_m_values(),
            epsilon_grid: default_epsilon_grid(),
            n_per_cluster: default_n_per_cluster(),
            reps: default_reps(),
            steps: default_steps(),
            burn_in: default_burn_in(),
            base_seed: 0,
            n_baseline: default_n_baseline(),
            map: LocalMapParams::default(),
            r_cap: default_r_cap(),
            fix_network: false,
            detection: DetectionMode::Heaviside,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() || self.epsilon_grid.is_empty() {
            return Err(Error::param("sweep grids must be non-empty"));
        }
        if self.reps < 1 {
            return Err(Error::param("reps must be at least 1"));
        }
        if self.n_baseline < 1 {
            return Err(Error::param("n_baseline must be at least 1"));
        }
        for &m in &self.m_values {
            NetworkParams::new(m, self.n_per_cluster, 0)?;
        }
        for eps in self.epsilon_grid.values() {
            self.sim_config(1, eps, 0, 0)?;
        }
        Ok(())
    }

    fn sim_config(&self, m: usize, epsilon: f64, net_seed: u64, sim_seed: u64) -> Result<SimConfig> {
        let cfg = SimConfig {
            map: self.map,
            net: NetworkParams::new(m, self.n_per_cluster, net_seed)?,
            epsilon,
            steps: self.steps,
            burn_in: self.burn_in,
            sim_seed,
            r_cap: self.r_cap,
            boundary: BoundaryPolicy::Clamp,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tasks(&self) -> Vec<SweepTask> {
        let eps = self.epsilon_grid.values();
        let mut tasks = Vec::with_capacity(self.m_values.len() * eps.len() * self.reps);
        for (mi, &m) in self.m_values.iter().enumerate() {
            for (ei, &epsilon) in eps.iter().enumerate() {
                for rep in 0..self.reps {
                    tasks.push(SweepTask {
                        id: ((mi * eps.len() + ei) * self.reps + rep) as u64,
                        m,
                        eps_index: ei,
                        epsilon,
                        rep,
                    });
                }
            }
        }
        tasks
    }

    /// `(net_seed, sim_seed)` of a task.
    pub fn task_seeds(&self, task: &SweepTask) -> (u64, u64) {
        let cell = [task.m as u64, task.eps_index as u64];
        let net_seed = if self.fix_network {
            derive_seed(self.base_seed, &[cell[0], cell[1], stream::NETWORK])
        } else {
            derive_seed(self.base_seed, &[cell[0], cell[1], task.rep as u64, stream::NETWORK])
        };
        let sim_seed = derive_seed(self.base_seed, &[cell[0], cell[1], task.rep as u64, stream::INITIAL]);
        (net_seed, sim_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepTask {
    /// Position in the full task list of the config; stable across subsets.
    pub id: u64,
    pub m: usize,
    pub eps_index: usize,
    pub epsilon: f64,
    pub rep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub task_id: u64,
    pub m: usize,
    pub epsilon: f64,
    pub rep: usize,
    pub m_hat: Option<usize>,
    /// Mean of the defined per-asset entropies.
    pub mean_entropy: Option<f64>,
    /// Population standard deviation of the defined per-asset entropies.
    pub std_entropy: Option<f64>,
    pub entropy_defined: usize,
    pub explained_variance: Option<f64>,
    pub stable: bool,
    pub net_seed: u64,
    pub sim_seed: u64,
}

/// Simulates and analyses one `(M, eps, rep)` task. Instability is recorded,
/// not raised.
pub fn run_record(cfg: &SweepConfig, task: &SweepTask) -> Result<SweepRecord> {
    let (net_seed, sim_seed) = cfg.task_seeds(task);
    let sim = cfg.sim_config(task.m, task.epsilon, net_seed, sim_seed)?;
    let mut record = SweepRecord {
        task_id: task.id,
        m: task.m,
        epsilon: task.epsilon,
        rep: task.rep,
        m_hat: None,
        mean_entropy: None,
        std_entropy: None,
        entropy_defined: 0,
        explained_variance: None,
        stable: false,
        net_seed,
        sim_seed,
    };
    let net = build_coupling(&sim.net)?;
    let panel = simulate_panel(&sim, &net)?;
    if !panel.stable {
        return Ok(record);
    }
    let baseline = baseline_spectrum(&sim, cfg.n_baseline)?;
    let fit = analyze_panel(&panel, &baseline, cfg.detection)?;
    let entropy = fit.entropy_summary();
    record.m_hat = Some(fit.m_hat);
    record.mean_entropy = entropy.map(|e| e.mean);
    record.std_entropy = entropy.map(|e| e.std);
    record.entropy_defined = entropy.map_or(0, |e| e.defined);
    record.explained_variance = Some(fit.explained_variance);
    record.stable = true;
    Ok(record)
}

/// Runs the given tasks in parallel; output is in task order.
pub fn run_tasks(cfg: &SweepConfig, tasks: &[SweepTask]) -> Result<Vec<SweepRecord>> {
    par_map(tasks, |t| run_record(cfg, t)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub m: usize,
    pub epsilon: f64,
    pub n_reps: usize,
    pub n_stable: usize,
    pub mu_mhat: Option<f64>,
    /// Population (`1/n`) standard deviation of the factor count.
    pub sigma_mhat: Option<f64>,
    pub mu_h: Option<f64>,
    pub sigma_h: Option<f64>,
    /// Repetitions contributing to `mu_h` / `sigma_h`.
    pub n_entropy: usize,
    pub mean_sigma_f2: Option<f64>,
    /// `|sigma_obs - sigma_model|` of the two-point model, when applicable.
    pub binary_deviation: Option<f64>,
}

fn mean_and_pop_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Aggregates records per `(M, eps)` over stable repetitions. The result is
/// independent of record order.
pub fn summarize(records: &[SweepRecord]) -> Vec<EnsembleSummary> {
    let mut cells: BTreeMap<(usize, u64), Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        // Grid epsilons are non-negative, so bit order matches numeric order.
        cells.entry((r.m, r.epsilon.to_bits())).or_default().push(r);
    }
    cells
        .into_values()
        .map(|mut group| {
            group.sort_by_key(|r| r.task_id);
            let stable: Vec<&SweepRecord> = group.iter().copied().filter(|r| r.stable).collect();
            let m_hats: Vec<usize> = stable.iter().filter_map(|r| r.m_hat).collect();
            let counts: Vec<f64> = m_hats.iter().map(|&v| v as f64).collect();
            let mhat_stats = mean_and_pop_std(&counts);
            let h_means: Vec<f64> = stable.iter().filter_map(|r| r.mean_entropy).collect();
            let h_stds: Vec<f64> = stable.iter().filter_map(|r| r.std_entropy).collect();
            let sf2: Vec<f64> = stable.iter().filter_map(|r| r.explained_variance).collect();
            let m = group[0].m;
            EnsembleSummary {
                m,
                epsilon: group[0].epsilon,
                n_reps: group.len(),
                n_stable: stable.len(),
                mu_mhat: mhat_stats.map(|s| s.0),
                sigma_mhat: mhat_stats.map(|s| s.1),
                mu_h: mean_and_pop_std(&h_means).map(|s| s.0),
                sigma_h: mean_and_pop_std(&h_stds).map(|s| s.0),
                n_entropy: h_means.len(),
                mean_sigma_f2: mean_and_pop_std(&sf2).map(|s| s.0),
                binary_deviation: check_binary_model_counts(&m_hats, m).map(|c| c.deviation),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub summaries: Vec<EnsembleSummary>,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let records = run_tasks(cfg, &cfg.tasks())?;
    let summaries = summarize(&records);
    Ok(SweepOutput { records, summaries })
}

// ---------------------------------------------------------------------------
// Two-point model
// ---------------------------------------------------------------------------

/// Standard deviation of a count equal to `m` or `m + 1`, given its mean:
/// `sqrt((mu - m)(m + 1 - mu))`.
pub fn binary_model_sigma(mu: f64, m: usize) -> Result<f64> {
    let m = m as f64;
    if !(mu >= m && mu <= m + 1.0) {
        return Err(Error::Domain {
            value: mu,
            domain: "[m, m + 1]",
        });
    }
    Ok(((mu - m) * (m + 1.0 - mu)).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryModelCheck {
    pub mu: f64,
    pub sigma_observed: f64,
    pub sigma_model: f64,
    pub deviation: f64,
    /// Every observation lies in `{m, m + 1}`.
    pub two_point: bool,
}

/// Compares the observed spread of factor counts with the two-point model.
/// `None` with fewer than two counts or when the mean leaves `[m, m + 1]`.
pub fn check_binary_model_counts(m_hats: &[usize], m: usize) -> Option<BinaryModelCheck> {
    if m_hats.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = m_hats.iter().map(|&v| v as f64).collect();
    let (mu, sigma_observed) = mean_and_pop_std(&xs)?;
    let sigma_model = binary_model_sigma(mu, m).ok()?;
    Some(BinaryModelCheck {
        mu,
        sigma_observed,
        sigma_model,
        deviation: (sigma_observed - sigma_model).abs(),
        two_point: m_hats.iter().all(|&v| v == m || v == m + 1),
    })
}

/// Two-point check over the stable records of one `(M, eps)` cell.
pub fn check_binary_model(records: &[SweepRecord]) -> Option<BinaryModelCheck> {
    let m = records.first()?.m;
    let m_hats: Vec<usize> = records.iter().filter(|r| r.stable).filter_map(|r| r.m_hat).collect();
    check_binary_model_counts(&m_hats, m)
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationGrid {
    pub r0: ValueGrid,
    pub gamma: ValueGrid,
    pub delta: ValueGrid,
}

impl Default for CalibrationGrid {
    /// 41 locations x 96 scales x 22 slopes = 86,592 triples.
    fn default() -> Self {
        let mut delta = ValueGrid::Range {
            start: 0.005,
            step: 0.001,
            count: 16,
        }
        .values();
        delta.extend([0.25, 0.03, 0.04, 0.05, 0.75, 0.1]);
        Self {
            r0: ValueGrid::Range {
                start: -0.02,
                step: 0.001,
                count: 41,
            },
            gamma: ValueGrid::Range {
                start: 5.0,
                step: 1.0,
                count: 96,
            },
            delta: ValueGrid::List(delta),
        }
    }
}

impl CalibrationGrid {
    /// Keeps every `stride`-th gamma value, starting with the first.
    pub fn with_gamma_stride(&self, stride: usize) -> Result<Self> {
        if stride < 1 {
            return Err(Error::param("grid stride must be at least 1"));
        }
        Ok(Self {
            gamma: ValueGrid::List(self.gamma.values().into_iter().step_by(stride).collect()),
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.r0.len() * self.gamma.len() * self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Triples in `r0`-major, then `gamma`, then `delta` order.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let (r0s, gammas, deltas) = (self.r0.values(), self.gamma.values(), self.delta.values());
        let mut out = Vec::with_capacity(self.len());
        for &r0 in &r0s {
            for &g in &gammas {
                for &d in &deltas {
                    out.push((r0, g, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Seed of the initial condition shared by every grid point.
    pub seed: u64,
    pub lags: usize,
    /// Report Ljung-Box and Durbin-Watson of the empirical series instead of
    /// the simulated one.
    pub diagnose_empirical: bool,
    /// `Truncate` reproduces the incomplete series of the unclamped map.
    pub boundary: BoundaryPolicy,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            lags: DEFAULT_LJUNG_BOX_LAGS,
            diagnose_empirical: false,
            boundary: BoundaryPolicy::Truncate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub r0: f64,
    pub gamma: f64,
    pub delta: f64,
    pub mse: Option<f64>,
    pub lb_pvalue: Option<f64>,
    pub dw: Option<f64>,
    pub complete: bool,
}

/// One uncoupled orbit per grid triple, scored against `empirical`.
/// Incomplete orbits keep their flag and no metrics.
pub fn run_calibration(
    empirical: &[f64],
    grid: &CalibrationGrid,
    opts: &CalibrationOptions,
) -> Result<Vec<CalibrationRow>> {
    let t = empirical.len();
    if t < 2 {
        return Err(Error::param("empirical series needs at least 2 points"));
    }
    if grid.is_empty() {
        return Err(Error::param("calibration grid is empty"));
    }
    let lags = opts.lags.min(t - 1).max(1);
    let empirical_diag = if opts.diagnose_empirical {
        Some((
            ljung_box(empirical, lags).ok().map(|l| l.p_value),
            durbin_watson(empirical).ok(),
        ))
    } else {
        None
    };
    let points = grid.points();
    let rows = par_map(&points, |&(r0, gamma, delta)| -> Result<CalibrationRow> {
        let params = LocalMapParams::new(gamma, r0, delta)?;
        let orbit = simulate_orbit(&params, t, 0, opts.seed, opts.boundary)?;
        let mut row = CalibrationRow {
            r0,
            gamma,
            delta,
            mse: None,
            lb_pvalue: None,
            dw: None,
            complete: orbit.stable && orbit.steps() == t,
        };
        if row.complete {
            let series = orbit.column(0);
            row.mse = Some(mse(&series, empirical)?);
            let (lb, dw) = empirical_diag.unwrap_or_else(|| {
                (
                    ljung_box(&series, lags).ok().map(|l| l.p_value),
                    durbin_watson(&series).ok(),
                )
            });
            row.lb_pvalue = lb;
            row.dw = dw;
        }
        Ok(row)
    });
    rows.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub total: usize,
    pub complete: usize,
    pub mse_threshold: f64,
    /// Complete rows with `mse <= mse_threshold`.
    pub below_threshold: usize,
    /// Complete rows with Ljung-Box `p >= 0.05` and `1.75 < DW < 2.25`.
    pub uncorrelated: usize,
}

impl CalibrationSummary {
    pub fn complete_fraction(&self) -> f64 {
        self.complete as f64 / self.total.max(1) as f64
    }

    pub fn below_fraction(&self) -> f64 {
        self.below_threshold as f64 / self.complete.max(1) as f64
    }

    pub fn uncorrelated_fraction(&self) -> f64 {
        self.uncorrelated as f64 / self.complete.max(1) as f64
    }
}

pub fn summarize_calibration(rows: &[CalibrationRow], mse_threshold: f64) -> CalibrationSummary {
    let complete: Vec<&CalibrationRow> = rows.iter().filter(|r| r.complete).collect();
    CalibrationSummary {
        total: rows.len(),
        complete: complete.len(),
        mse_threshold,
        below_threshold: complete
            .iter()
            .filter(|r| r.mse.is_some_and(|m| m <= mse_threshold))
            .count(),
        uncorrelated: complete
            .iter()
            .filter(|r| r.lb_pvalue.is_some_and(|p| p >= 0.05) && r.dw.is_some_and(|d| d > 1.75 && d < 2.25))
            .count(),
    }
}

// ---------------------------------------------------------------------------
// Estimator sampling study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingStudy {
    pub params: LocalMapParams,
    pub series_len: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub skewness: Vec<f64>,
    pub kurtosis: Vec<f64>,
}

impl SamplingStudy {
    /// Spread of the sample mean relative to the i.i.d. prediction
    /// `sigma / sqrt(T)` with the population sigma of the sech law.
    pub fn mean_spread_ratio(&self) -> f64 {
        let (_, sd) = mean_and_pop_std(&self.means).unwrap_or((0.0, 0.0));
        sd / (self.params.std_dev() / (self.series_len as f64).sqrt())
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Moment estimators over `n_series` independent uncoupled orbits of length
/// `series_len`. Series without defined skewness and kurtosis are skipped.
pub fn estimator_sampling_study(
    params: &LocalMapParams,
    n_series: usize,
    series_len: usize,
    seed: u64,
) -> Result<SamplingStudy> {
    params.validate()?;
    if n_series < 100 {
        return Err(Error::param(format!("need at least 100 series, got {n_series}")));
    }
    let idx: Vec<u64> = (0..n_series as u64).collect();
    let moments = par_map(&idx, |&i| -> Result<_> {
        let s = derive_seed(seed, &[stream::SAMPLING, i]);
        let orbit = simulate_orbit(params, series_len, 0, s, BoundaryPolicy::Clamp)?;
        sample_moments(&orbit.column(0))
    });
    let mut study = SamplingStudy {
        params: *params,
        series_len,
        means: Vec::with_capacity(n_series),
        stds: Vec::with_capacity(n_series),
        skewness: Vec::with_capacity(n_series),
        kurtosis: Vec::with_capacity(n_series),
    };
    for m in moments {
        let m = m?;
        // A constant series has no shape moments; the vectors stay aligned.
        if let (Some(skew), Some(kurt)) = (m.skewness, m.excess_kurtosis) {
            study.means.push(m.mean);
            study.stds.push(m.std);
            study.skewness.push(skew);
            study.kurtosis.push(kurt);
        }
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: usize, eps: f64, rep: usize, m_hat: usize) -> SweepRecord {
        SweepRecord {
            task_id: rep as u64,
            m,
            epsilon: eps,
            rep,
            m_hat: Some(m_hat),
            mean_entropy: Some(0.8),
            std_entropy: Some(0.1),
            entropy_defined: 30,
            explained_variance: Some(0.7),
            stable: true,
            net_seed: 0,
            sim_seed: 0,
        }
    }

    #[test]
    fn grids_by_index() {
        let g = ValueGrid::Range {
            start: 0.2,
            step: 0.01,
            count: 51,
        };
        let v = g.values();
        assert_eq!(v.len(), 51);
        assert_eq!(v[0], 0.2);
        assert_eq!(v[25], 0.45);
        assert_eq!(v[50], 0.7);
        assert_eq!(v[16], 0.36);
    }

    #[test]
    fn reference_calibration_grid_size() {
        let g = CalibrationGrid::default();
        assert_eq!(g.len(), 41 * 96 * 22);
        assert_eq!(g.len(), 86_592);
        assert_eq!(g.r0.values()[0], -0.02);
        assert_eq!(g.r0.values()[40], 0.02);
        assert_eq!(g.r0.values()[21], 0.001);
        assert_eq!(*g.gamma.values().last().unwrap(), 100.0);
        assert_eq!(g.delta.values()[6], 0.011);
        let strided = g.with_gamma_stride(5).unwrap();
        assert_eq!(strided.len(), 41 * 20 * 22);
        assert_eq!(strided.gamma.values()[..3], [5.0, 10.0, 15.0]);
        assert!(g.with_gamma_stride(0).is_err());
    }

    #[test]
    fn binary_sigma_examples() {
        assert_eq!(binary_model_sigma(3.0, 3).unwrap(), 0.0);
        assert_eq!(binary_model_sigma(3.5, 3).unwrap(), 0.5);
        assert_eq!(binary_model_sigma(4.0, 3).unwrap(), 0.0);
        assert!(binary_model_sigma(2.9, 3).is_err());
        assert!(binary_model_sigma(4.1, 3).is_err());
    }

    #[test]
    fn binary_check_examples() {
        let c = check_binary_model_counts(&[3, 3, 4, 4], 3).unwrap();
        assert_eq!(c.mu, 3.5);
        assert_eq!(c.sigma_observed, 0.5);
        assert_eq!(c.deviation, 0.0);
        assert!(c.two_point);
        let flat = check_binary_model_counts(&[3, 3, 3, 3], 3).unwrap();
        assert_eq!(flat.deviation, 0.0);
        let off = check_binary_model_counts(&[3, 3, 3, 5], 3).unwrap();
        assert!(!off.two_point);
        // mu 3.5, sigma_obs sqrt(0.75), model 0.5
        assert!((off.deviation - (0.75f64.sqrt() - 0.5)).abs() < 1e-15);
        assert!(check_binary_model_counts(&[3], 3).is_none());
        assert!(check_binary_model_counts(&[5, 5], 3).is_none());
        let records: Vec<SweepRecord> = [3, 3, 4, 4]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(3, 0.4, i, v))
            .collect();
        assert_eq!(check_binary_model(&records).unwrap().deviation, 0.0);
    }

    #[test]
    fn summary_uses_population_std_and_stable_reps() {
        let mut records: Vec<SweepRecord> = [3, 4, 3, 4]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(3, 0.4, i, v))
            .collect();
        let mut unstable = rec(3, 0.4, 4, 0);
        unstable.stable = false;
        unstable.m_hat = None;
        unstable.task_id = 4;
        records.push(unstable);
        records.push(rec(2, 0.4, 0, 2));
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].m, 2);
        let cell = &s[1];
        assert_eq!((cell.n_reps, cell.n_stable), (5, 4));
        assert_eq!(cell.mu_mhat, Some(3.5));
        assert_eq!(cell.sigma_mhat, Some(0.5));
        assert_eq!(cell.binary_deviation, Some(0.0));
        assert_eq!(s[0].binary_deviation, None);
        // order independence
        let mut shuffled = records.clone();
        shuffled.reverse();
        assert_eq!(summarize(&shuffled), s);
    }

    #[test]
    fn task_seeds_are_stable_and_distinct() {
        let cfg = SweepConfig {
            m_values: vec![2, 3],
            epsilon_grid: ValueGrid::List(vec![0.4, 0.45]),
            reps: 3,
            ..SweepConfig::default()
        };
        let tasks = cfg.tasks();
        assert_eq!(tasks.len(), 12);
        let seeds: std::collections::HashSet<u64> = tasks
            .iter()
            .flat_map(|t| {
                let (a, b) = cfg.task_seeds(t);
                [a, b]
            })
            .collect();
        assert_eq!(seeds.len(), 24);
        let fixed = SweepConfig {
            fix_network: true,
            ..cfg.clone()
        };
        let t = fixed.tasks();
        assert_eq!(fixed.task_seeds(&t[0]).0, fixed.task_seeds(&t[1]).0);
        assert_ne!(fixed.task_seeds(&t[0]).1, fixed.task_seeds(&t[1]).1);
    }

    #[test]
    fn small_sweep_is_deterministic_and_isolated() {
        let cfg = SweepConfig {
            m_values: vec![3],
            epsilon_grid: ValueGrid::List(vec![0.45]),
            reps: 4,
            base_seed: 17,
            ..SweepConfig::default()
        };
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summaries.len(), 1);
        let tasks = cfg.tasks();
        assert_eq!(run_record(&cfg, &tasks[2]).unwrap(), a.records[2]);
        assert!(a.records.iter().all(|r| r.m_hat == Some(3)));
    }

    #[test]
    fn sweep_config_validation() {
        let mut cfg = SweepConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.reps = 0;
        assert!(cfg.validate().is_err());
        let cfg = SweepConfig {
            epsilon_grid: ValueGrid::List(vec![1.5]),
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SweepConfig {
            m_values: vec![],
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn calibration_rows_and_flags() {
        let empirical: Vec<f64> = (0..251).map(|t| 0.02 * ((t as f64) * 0.7).sin()).collect();
        let grid = CalibrationGrid {
            r0: ValueGrid::List(vec![0.001]),
            gamma: ValueGrid::List(vec![60.0]),
            delta: ValueGrid::List(vec![0.011, 0.25]),
        };
        let rows = run_calibration(&empirical, &grid, &CalibrationOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        let good = rows[0];
        assert!(good.complete);
        let m = good.mse.unwrap();
        // roughly var(sim) + var(empirical)
        assert!(m > 0.0 && m < 0.005, "{m}");
        assert!(good.lb_pvalue.is_some() && good.dw.is_some());
        // slope 1/4 is an exact binary shift: the state collapses to 0
        let collapsed = rows[1];
        assert!(!collapsed.complete);
        assert!(collapsed.mse.is_none() && collapsed.dw.is_none());

        let opts = CalibrationOptions {
            diagnose_empirical: true,
            ..CalibrationOptions::default()
        };
        let emp_rows = run_calibration(&empirical, &grid, &opts).unwrap();
        assert_eq!(emp_rows[0].dw, Some(durbin_watson(&empirical).unwrap()));
        assert!(run_calibration(&[0.1], &grid, &opts).is_err());
        let s = summarize_calibration(&rows, 0.0042);
        assert_eq!((s.total, s.complete, s.below_threshold), (2, 1, 1));
    }

    #[test]
    fn sampling_study_matches_sech_law() {
        let p = LocalMapParams::default();
        let study = estimator_sampling_study(&p, 2000, 1000, 3).unwrap();
        let sd_med = median(&study.stds).unwrap();
        assert!(sd_med > 0.95 * p.std_dev() && sd_med < 1.05 * p.std_dev(), "{sd_med}");
        let k_med = median(&study.kurtosis).unwrap();
        assert!((1.5..=2.5).contains(&k_med), "{k_med}");
        assert!(estimator_sampling_study(&p, 99, 100, 0).is_err());
    }

    #[test]
    fn mean_spreads_wider_than_iid() {
        let study = estimator_sampling_study(&LocalMapParams::default(), 10_000, 251, 9).unwrap();
        assert!(study.mean_spread_ratio() >= 1.0, "{}", study.mean_spread_ratio());
    }

    proptest::proptest! {
        #[test]
        fn two_point_counts_match_model(m in 1usize..8, lo in 0usize..50, hi in 0usize..50) {
            proptest::prop_assume!(lo + hi >= 2);
            let mut counts = vec![m; lo];
            counts.extend(std::iter::repeat_n(m + 1, hi));
            let c = check_binary_model_counts(&counts, m).unwrap();
            proptest::prop_assert!(c.two_point);
            proptest::prop_assert!(c.deviation < 1e-12);
            proptest::prop_assert!(c.sigma_observed <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
