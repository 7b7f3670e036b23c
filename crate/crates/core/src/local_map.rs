//! Single-asset chaotic map.
//!
//! A return `r` is pushed through the hyperbolic-secant CDF to a latent
//! uniform `u`, advanced by the Bernoulli shift `u -> u/delta mod 1`, and
//! mapped back through the quantile function. Because the shift preserves the
//! uniform law (exactly when `1/delta` is an integer, approximately
//! otherwise) the orbit's marginal is the sech density
//!
//! ```text
//! rho(r) = (gamma / pi) * sech(gamma * (r - r0))
//! ```
//!
//! with mean `r0`, variance `pi^2 / (4 gamma^2)` and excess kurtosis 2.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latent states closer than this to 0 or 1 are clamped before inversion.
pub const U_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalMapParams {
    /// Inverse scale of the sech density.
    pub gamma: f64,
    /// Location (mean return).
    pub r0: f64,
    /// Bernoulli slope parameter; the shift multiplies by `1/delta`.
    pub delta: f64,
}

impl Default for LocalMapParams {
    /// The values calibrated against daily equity returns: `gamma = 60`,
    /// `r0 = 0.001`, `delta = 0.011`.
    fn default() -> Self {
        Self {
            gamma: 60.0,
            r0: 0.001,
            delta: 0.011,
        }
    }
}

impl LocalMapParams {
    pub fn new(gamma: f64, r0: f64, delta: f64) -> Result<Self> {
        let params = Self { gamma, r0, delta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::param(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !self.r0.is_finite() {
            return Err(Error::param("r0 must be finite"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.r0
    }

    pub fn variance(&self) -> f64 {
        PI * PI / (4.0 * self.gamma * self.gamma)
    }

    pub fn std_dev(&self) -> f64 {
        PI / (2.0 * self.gamma)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        2.0
    }
}

/// Latent state of one asset: the return and its image under the CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapState {
    pub r: f64,
    pub u: f64,
}

impl MapState {
    pub fn from_return(r: f64, params: &LocalMapParams) -> Self {
        Self {
            r,
            u: forward_transform(r, params),
        }
    }

    /// Advances one step; returns `true` when the latent state hit a boundary.
    pub fn advance(&mut self, params: &LocalMapParams) -> bool {
        let step = local_map_step(self.r, params);
        self.r = step.value;
        self.u = forward_transform(self.r, params);
        step.boundary_hit
    }
}

pub fn sech_pdf(r: f64, params: &LocalMapParams) -> f64 {
    let z = params.gamma * (r - params.r0);
    // cosh overflows to +inf for |z| > ~710, giving a density of exactly 0.
    params.gamma / PI / z.cosh()
}

/// CDF of the sech density, `1/2 + atan(sinh(z))/pi` with `z = gamma (r - r0)`.
///
/// Evaluated as `atan(e^z) / (pi/2)` below the median and as its complement
/// above, which keeps full relative precision in the lower tail and the best
/// representable rounding of `u` in the upper one.
pub fn forward_transform(r: f64, params: &LocalMapParams) -> f64 {
    let z = params.gamma * (r - params.r0);
    if z <= 0.0 {
        z.exp().atan() / FRAC_PI_2
    } else {
        1.0 - (-z).exp().atan() / FRAC_PI_2
    }
}

/// Quantile function `r0 + asinh(tan(pi (u - 1/2))) / gamma`.
///
/// The tails use the equivalent form `ln(tan(pi u / 2))` measured from the
/// nearer endpoint, so small `u` and small `1 - u` do not cancel against 1/2.
pub fn inverse_transform(u: f64, params: &LocalMapParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            value: u,
            domain: "(0, 1)",
        });
    }
    let z = if u < 0.25 {
        (FRAC_PI_2 * u).tan().ln()
    } else if u > 0.75 {
        -(FRAC_PI_2 * (1.0 - u)).tan().ln()
    } else {
        (PI * (u - 0.5)).tan().asinh()
    };
    Ok(params.r0 + z / params.gamma)
}

pub fn bernoulli_step(u: f64, params: &LocalMapParams) -> f64 {
    let v = u / params.delta;
    v - v.floor()
}

/// Output of one application of the local map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapStep {
    pub value: f64,
    /// The shifted latent state fell within [`U_FLOOR`] of 0 or 1 and was
    /// clamped. Without the clamp the quantile would be infinite.
    pub boundary_hit: bool,
}

/// `g(r) = h^-1(bernoulli(h(r)))`.
///
/// A non-finite input propagates as a NaN value so the caller can flag
/// divergence.
pub fn local_map_step(r: f64, params: &LocalMapParams) -> MapStep {
    if !r.is_finite() {
        return MapStep {
            value: f64::NAN,
            boundary_hit: false,
        };
    }
    let shifted = bernoulli_step(forward_transform(r, params), params);
    let clamped = shifted.clamp(U_FLOOR, 1.0 - U_FLOOR);
    let value = inverse_transform(clamped, params).expect("clamped state lies in (0, 1)");
    MapStep {
        value,
        boundary_hit: clamped != shifted,
    }
}
