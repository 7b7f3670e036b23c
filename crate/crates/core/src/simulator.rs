//! Iteration of the coupled map
//!
//! ```text
//! r[t+1] = (1 - eps) g(r[t]) + (eps / N) C g(r[t])
//! ```
//!
//! where `g` is the local map applied to every asset.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_map::{inverse_transform, local_map_step, LocalMapParams};
use crate::network::{CouplingNetwork, NetworkParams};
use crate::seeds::{rng_from_seed, SimRng};

pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_R_CAP: f64 = 10.0;

/// What to do when the Bernoulli state lands on the boundary of `[0, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Clamp to `[1e-15, 1 - 1e-15]` and keep going.
    #[default]
    Clamp,
    /// Treat the hit as divergence, since the unclamped quantile is infinite.
    Truncate,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_r_cap() -> f64 {
    DEFAULT_R_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub map: LocalMapParams,
    pub net: NetworkParams,
    /// Coupling strength in `[0, 1]`.
    pub epsilon: f64,
    /// Number of recorded steps (trading days).
    #[serde(rename = "t")]
    pub steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub sim_seed: u64,
    #[serde(default = "default_r_cap")]
    pub r_cap: f64,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
}

impl SimConfig {
    pub fn new(map: LocalMapParams, net: NetworkParams, epsilon: f64, steps: usize, sim_seed: u64) -> Result<Self> {
        let cfg = Self {
            map,
            net,
            epsilon,
            steps,
            burn_in: DEFAULT_BURN_IN,
            sim_seed,
            r_cap: DEFAULT_R_CAP,
            boundary: BoundaryPolicy::Clamp,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.net.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.steps < 2 {
            return Err(Error::param(format!(
                "at least 2 steps are required, got {}",
                self.steps
            )));
        }
        if !(self.r_cap.is_finite() && self.r_cap > 0.0) {
            return Err(Error::param(format!("r_cap must be positive, got {}", self.r_cap)));
        }
        Ok(())
    }

    pub fn assets(&self) -> usize {
        self.net.assets()
    }

    /// FNV-1a hash of the canonical JSON encoding.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serialises");
        fnv1a(&json)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Simulated (or ingested) returns, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub returns: DMatrix<f64>,
    pub stable: bool,
    /// Number of rows recorded before divergence, when truncated.
    pub truncated_at: Option<usize>,
    /// Latent-state boundary events over burn-in and recording.
    pub boundary_hits: usize,
    pub config_hash: u64,
}

impl ReturnPanel {
    /// Wraps an externally supplied matrix (rows = time).
    pub fn from_matrix(returns: DMatrix<f64>) -> Self {
        let stable = returns.iter().all(|x| x.is_finite());
        Self {
            returns,
            stable,
            truncated_at: None,
            boundary_hits: 0,
            config_hash: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.returns.nrows()
    }

    pub fn assets(&self) -> usize {
        self.returns.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.returns.column(k).iter().copied().collect()
    }
}

/// Result of one coupled update.
#[derive(Debug, Clone)]
pub struct SystemStep {
    pub next: DVector<f64>,
    pub boundary_hits: usize,
}

/// One application of the coupled update.
pub fn step_system(r: &DVector<f64>, cfg: &SimConfig, net: &CouplingNetwork) -> Result<SystemStep> {
    if r.len() != net.assets() {
        return Err(Error::DimensionMismatch {
            expected: net.assets(),
            found: r.len(),
        });
    }
    Stepper::new(cfg, net).step(r)
}

struct Stepper {
    map: LocalMapParams,
    update: Option<DMatrix<f64>>,
    r_cap: f64,
    boundary: BoundaryPolicy,
}

impl Stepper {
    fn new(cfg: &SimConfig, net: &CouplingNetwork) -> Self {
        Self::with_update(cfg, (cfg.epsilon != 0.0).then(|| net.update_matrix(cfg.epsilon)))
    }

    fn uncoupled(cfg: &SimConfig) -> Self {
        Self::with_update(cfg, None)
    }

    fn with_update(cfg: &SimConfig, update: Option<DMatrix<f64>>) -> Self {
        Self {
            map: cfg.map,
            update,
            r_cap: cfg.r_cap,
            boundary: cfg.boundary,
        }
    }

    fn step(&self, r: &DVector<f64>) -> Result<SystemStep> {
        let mut hits = 0;
        let mut local = DVector::zeros(r.len());
        for (k, (&x, y)) in r.iter().zip(local.iter_mut()).enumerate() {
            let step = local_map_step(x, &self.map);
            if step.boundary_hit {
                hits += 1;
                if self.boundary == BoundaryPolicy::Truncate {
                    return Err(Error::Diverged {
                        asset: k,
                        value: f64::NEG_INFINITY,
                    });
                }
            }
            *y = step.value;
        }
        let next = match &self.update {
            Some(w) => w * local,
            None => local,
        };
        if let Some((asset, &value)) = next
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > self.r_cap)
        {
            return Err(Error::Diverged { asset, value });
        }
        Ok(SystemStep {
            next,
            boundary_hits: hits,
        })
    }
}

fn initial_state(map: &LocalMapParams, assets: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(assets, |_, _| {
        let u: f64 = rng.sample(rand::distr::Open01);
        inverse_transform(u, map).expect("open-interval draw")
    })
}

fn run(cfg: &SimConfig, stepper: &Stepper, assets: usize) -> ReturnPanel {
    let mut rng = rng_from_seed(cfg.sim_seed);
    let mut state = initial_state(&cfg.map, assets, &mut rng);
    let mut hits = 0;
    let mut data = Vec::with_capacity(cfg.steps * assets);
    let mut recorded = 0;
    let mut diverged = false;
    for t in 0..cfg.burn_in + cfg.steps {
        match stepper.step(&state) {
            Ok(step) => {
                hits += step.boundary_hits;
                state = step.next;
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
        if t >= cfg.burn_in {
            data.extend(state.iter());
            recorded += 1;
        }
    }
    ReturnPanel {
        returns: DMatrix::from_row_slice(recorded, assets, &data),
        stable: !diverged,
        truncated_at: diverged.then_some(recorded),
        boundary_hits: hits,
        config_hash: cfg.config_hash(),
    }
}

/// Iterates the coupled system from initial returns drawn i.i.d. from the
/// sech density. Divergence is recorded in the panel, never returned as an
/// error.
pub fn simulate_panel(cfg: &SimConfig, net: &CouplingNetwork) -> Result<ReturnPanel> {
    cfg.validate()?;
    if cfg.net.assets() != net.assets() || cfg.net.nodes_per_cluster != net.params.nodes_per_cluster {
        return Err(Error::DimensionMismatch {
            expected: cfg.assets(),
            found: net.assets(),
        });
    }
    Ok(run(cfg, &Stepper::new(cfg, net), net.assets()))
}

/// Independent orbits of the local map (`eps = 0`); needs no coupling network.
///
/// Produces exactly the same panel as [`simulate_panel`] would for the same
/// configuration at `eps = 0`, with `cfg.epsilon` ignored.
pub fn simulate_uncoupled(cfg: &SimConfig) -> Result<ReturnPanel> {
    let mut cfg = *cfg;
    cfg.epsilon = 0.0;
    cfg.validate()?;
    Ok(run(&cfg, &Stepper::uncoupled(&cfg), cfg.assets()))
}

/// Single-asset orbit of the local map, without the cluster-size constraint.
pub fn simulate_orbit(
    map: &LocalMapParams,
    steps: usize,
    burn_in: usize,
    seed: u64,
    boundary: BoundaryPolicy,
) -> Result<ReturnPanel> {
    map.validate()?;
    // A 1 x 2 network is only a carrier for the config; at eps = 0 it is never used.
    let cfg = SimConfig {
        map: *map,
        net: NetworkParams {
            clusters: 1,
            nodes_per_cluster: 2,
            seed: 0,
        },
        epsilon: 0.0,
        steps,
        burn_in,
        sim_seed: seed,
        r_cap: DEFAULT_R_CAP,
        boundary,
    };
    if steps < 1 {
        return Err(Error::param("orbit needs at least one step"));
    }
    Ok(run(&cfg, &Stepper::uncoupled(&cfg), 1))
}

pub fn returns_to_prices(returns: &[f64], p0: f64) -> Result<Vec<f64>> {
    if !(p0.is_finite() && p0 > 0.0) {
        return Err(Error::Domain {
            value: p0,
            domain: "p0 > 0",
        });
    }
    let mut prices = Vec::with_capacity(returns.len() + 1);
    prices.push(p0);
    for &r in returns {
        if !(r > -1.0) {
            return Err(Error::Domain {
                value: r,
                domain: "returns > -1",
            });
        }
        let last = *prices.last().expect("non-empty");
        prices.push(last * (1.0 + r));
    }
    Ok(prices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_coupling;

    fn cfg(m: usize, n: usize, eps: f64, steps: usize, seed: u64) -> SimConfig {
        SimConfig::new(
            LocalMapParams::default(),
            NetworkParams::new(m, n, seed ^ 0xABCD).unwrap(),
            eps,
            steps,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        let mut c = cfg(3, 10, 0.45, 251, 1);
        assert!(c.validate().is_ok());
        c.epsilon = 1.2;
        assert!(c.validate().is_err());
        c.epsilon = 0.5;
        c.steps = 1;
        assert!(c.validate().is_err());
        c.steps = 10;
        c.r_cap = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn uncoupled_step_is_local_map() {
        let c = cfg(2, 3, 0.0, 10, 3);
        let net = build_coupling(&c.net).unwrap();
        let r = DVector::from_vec(vec![0.01, -0.02, 0.0, 0.03, 0.001, -0.05]);
        let next = step_system(&r, &c, &net).unwrap().next;
        for k in 0..6 {
            assert_eq!(next[k], local_map_step(r[k], &c.map).value);
        }
    }

    #[test]
    fn fully_coupled_step() {
        let c = cfg(2, 3, 1.0, 10, 3);
        let net = build_coupling(&c.net).unwrap();
        let r = DVector::from_vec(vec![0.01, -0.02, 0.0, 0.03, 0.001, -0.05]);
        let g = r.map(|x| local_map_step(x, &c.map).value);
        let expected = &net.coupling * g / 3.0;
        let next = step_system(&r, &c, &net).unwrap().next;
        assert!((next - expected).amax() < 1e-15);
    }

    #[test]
    fn half_coupling_projects_onto_nullspace() {
        let c = cfg(3, 10, 0.5, 10, 9);
        let net = build_coupling(&c.net).unwrap();
        let p = net.nullspace_projector().unwrap();
        let r = DVector::from_fn(30, |i, _| 0.001 * (i as f64 - 15.0));
        let next = step_system(&r, &c, &net).unwrap().next;
        let transverse = &next - &p * &next;
        assert!(transverse.norm() < 1e-9 * next.norm());
    }

    #[test]
    fn step_rejects_wrong_dimension() {
        let c = cfg(2, 3, 0.3, 10, 3);
        let net = build_coupling(&c.net).unwrap();
        assert!(step_system(&DVector::zeros(5), &c, &net).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = cfg(2, 3, 0.0, 10, 3);
        c.r_cap = 1e-6;
        let net = build_coupling(&c.net).unwrap();
        let r = DVector::from_element(6, 0.01);
        assert!(matches!(step_system(&r, &c, &net), Err(Error::Diverged { .. })));
    }

    #[test]
    fn panel_shape_and_determinism() {
        let c = cfg(3, 10, 0.45, 251, 7);
        let net = build_coupling(&c.net).unwrap();
        let a = simulate_panel(&c, &net).unwrap();
        let b = simulate_panel(&c, &net).unwrap();
        assert_eq!(a.returns.shape(), (251, 30));
        assert!(a.stable);
        assert_eq!(a.truncated_at, None);
        assert_eq!(a, b);
        let mut other = c;
        other.sim_seed = 8;
        assert_ne!(simulate_panel(&other, &net).unwrap().returns, a.returns);
    }

    #[test]
    fn truncated_panel_records_partial_rows() {
        let mut c = cfg(2, 3, 0.2, 50, 1);
        c.r_cap = 0.05;
        c.burn_in = 0;
        let net = build_coupling(&c.net).unwrap();
        let panel = simulate_panel(&c, &net).unwrap();
        assert!(!panel.stable);
        let rows = panel.truncated_at.unwrap();
        assert_eq!(panel.steps(), rows);
        assert!(rows < 50);
        assert!(panel.returns.iter().all(|x| x.abs() <= 0.05));
    }

    #[test]
    fn uncoupled_matches_zero_epsilon_panel() {
        let c = cfg(2, 5, 0.0, 100, 4);
        let net = build_coupling(&c.net).unwrap();
        assert_eq!(
            simulate_panel(&c, &net).unwrap().returns,
            simulate_uncoupled(&c).unwrap().returns
        );
    }

    #[test]
    fn mismatched_network_rejected() {
        let c = cfg(3, 10, 0.3, 20, 1);
        let net = build_coupling(&NetworkParams::new(2, 10, 1).unwrap()).unwrap();
        assert!(simulate_panel(&c, &net).is_err());
    }

    #[test]
    fn truncate_policy_stops_at_boundary() {
        let doubling = LocalMapParams::new(60.0, 0.001, 0.5).unwrap();
        let clamp = simulate_orbit(&doubling, 400, 0, 3, BoundaryPolicy::Clamp).unwrap();
        assert!(clamp.stable);
        assert!(clamp.boundary_hits > 0);
        let strict = simulate_orbit(&doubling, 400, 0, 3, BoundaryPolicy::Truncate).unwrap();
        assert!(!strict.stable);
        assert!(strict.steps() < 400);
        assert_eq!(strict.returns.as_slice(), &clamp.returns.as_slice()[..strict.steps()]);
    }

    #[test]
    fn prices() {
        assert_eq!(returns_to_prices(&[0.0; 5], 100.0).unwrap(), vec![100.0; 6]);
        let p = returns_to_prices(&[0.1], 100.0).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[1] - 110.0).abs() < 1e-12);
        let p = returns_to_prices(&[0.01, -0.01], 1.0).unwrap();
        assert!((p[1] - 1.01).abs() < 1e-15 && (p[2] - 0.9999).abs() < 1e-15);
        assert!(returns_to_prices(&[0.1, -1.0], 1.0).is_err());
        assert!(returns_to_prices(&[0.1], 0.0).is_err());
    }
}
