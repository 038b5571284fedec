//! Population-level κ-cover semantics for two normal distributions.
//!
//! For normals the "for every level below κ" condition collapses to a check
//! at κ itself plus `σ_T ≤ σ_R`: with the narrower test distribution both
//! quantile gaps shrink monotonically towards the centre, and with a wider one
//! the lower tail eventually escapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng_dist::{phi, quantile_unchecked};

/// Relative tolerance for deciding that two quantiles coincide.
pub const BOUNDARY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::domain(format!(
                "normal parameters need finite mu and sigma > 0, got ({mu}, {sigma})"
            )));
        }
        Ok(NormalParams { mu, sigma })
    }

    pub const fn standard() -> Self {
        NormalParams {
            mu: 0.0,
            sigma: 1.0,
        }
    }

    /// `Q_q = mu + sigma * z_q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        crate::rng_dist::std_normal_quantile(q).map(|z| self.mu + self.sigma * z)
    }

    /// Image under `x -> a*x + b` with `a > 0`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        NormalParams {
            mu: a * self.mu + b,
            sigma: a * self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingSide {
    Lower,
    Upper,
    Both,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaVerdict {
    pub in_null: bool,
    pub on_boundary: bool,
    pub binding_side: BindingSide,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa <= 0.5 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "kappa must lie in (0, 0.5], got {kappa}"
        )))
    }
}

/// Whether `reference` is a κ-cover of `test`.
pub fn is_kappa_cover(
    reference: NormalParams,
    test: NormalParams,
    kappa: f64,
) -> Result<ThetaVerdict> {
    check_kappa(kappa)?;
    let z = if kappa == 0.5 {
        0.0
    } else {
        -quantile_unchecked(kappa)
    };

    let (lo_r, lo_t) = (reference.mu - reference.sigma * z, test.mu - test.sigma * z);
    let (hi_r, hi_t) = (reference.mu + reference.sigma * z, test.mu + test.sigma * z);
    // positive gap = condition satisfied with room to spare
    let lower_gap = lo_t - lo_r;
    let upper_gap = hi_r - hi_t;

    let tol = |a: f64, b: f64| BOUNDARY_RTOL * a.abs().max(b.abs()).max(reference.sigma);
    let lower_tol = tol(lo_r, lo_t);
    let upper_tol = tol(hi_r, hi_t);

    let in_null =
        test.sigma <= reference.sigma && lower_gap >= -lower_tol && upper_gap >= -upper_tol;
    let lower_binds = in_null && lower_gap.abs() <= lower_tol;
    let upper_binds = in_null && upper_gap.abs() <= upper_tol;

    let binding_side = match (lower_binds, upper_binds) {
        (true, true) => BindingSide::Both,
        (true, false) => BindingSide::Lower,
        (false, true) => BindingSide::Upper,
        (false, false) => BindingSide::None,
    };
    Ok(ThetaVerdict {
        in_null,
        on_boundary: lower_binds || upper_binds,
        binding_side,
    })
}

/// Largest κ in (0, 0.5] at which `reference` covers `test`, if any.
pub fn max_kappa(reference: NormalParams, test: NormalParams) -> Option<f64> {
    let d_mu = (test.mu - reference.mu).abs();
    if test.sigma > reference.sigma {
        return None;
    }
    if test.sigma == reference.sigma {
        return (d_mu == 0.0).then_some(0.5);
    }
    // quantile equality: d_mu + sigma_T z = sigma_R z
    let k = phi(-d_mu / (reference.sigma - test.sigma)).min(0.5);
    (k > 0.0).then_some(k)
}

/// σ_T placing `N(mu_t, σ_T)` on the upper leg of the null region against
/// `N(0, 1)`: `σ_T = (z_{1-κ} - mu_t) / z_{1-κ}`.
pub fn boundary_sigma(mu_t: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::domain(format!(
            "boundary parameterization needs kappa in (0, 0.5), got {kappa}"
        )));
    }
    let z = -quantile_unchecked(kappa);
    if !(mu_t >= 0.0) || mu_t >= z {
        return Err(Error::domain(format!(
            "mu_T={mu_t} must lie in [0, z_(1-kappa)={z:.6}) for a positive boundary sigma"
        )));
    }
    Ok((z - mu_t) / z)
}
