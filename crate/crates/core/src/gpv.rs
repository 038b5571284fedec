//! Generalized test statistics `T3^u`, `T3^l`, `T|3|` and the five
//! generalized p-values estimated from one shared stream of pivotal draws.
//!
//! All three statistics share the pivotal part
//!
//! ```text
//! W = -Z * sqrt(v_R^2 / (n_R U_R^2) + v_T^2 / (n_T U_T^2)) + z_(1-κ) * (v_R / U_R - v_T / U_T)
//! ```
//!
//! with `v_i^2 = (n_i - 1) s_i^2`, and differ only in the location term:
//! `+x̄_d`, `-x̄_d` and `-|x̄_d|` for `x̄_d = x̄_R - x̄_T`. `T|3|` therefore equals
//! `T3^l` or `T3^u` bit for bit on every draw, which makes
//! `p_|3| = min(p_u, p_l)` exact on shared draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng_dist::{quantile_unchecked, DrawVector, PivotSampler, RngStream, SampleSummary};

/// Inner draws per p-value unless configured otherwise.
pub const DEFAULT_DRAWS: usize = 10_000;

/// Per-summary constants of the T3 statistics.
#[derive(Debug, Clone, Copy)]
pub struct T3Kernel {
    x_d: f64,
    c_r: f64,
    c_t: f64,
    v_r: f64,
    v_t: f64,
    z: f64,
}

impl T3Kernel {
    pub fn new(summ_r: &SampleSummary, summ_t: &SampleSummary, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 0.5) {
            return Err(Error::domain(format!(
                "kappa must lie in (0, 0.5], got {kappa}"
            )));
        }
        for (name, s) in [("reference", summ_r), ("test", summ_t)] {
            if s.is_degenerate() {
                return Err(Error::DegenerateSample {
                    sample: name.into(),
                    sd: s.sd,
                });
            }
            if s.n < 2 {
                return Err(Error::InsufficientData { got: s.n, need: 2 });
            }
        }
        let v2 = |s: &SampleSummary| (s.n as f64 - 1.0) * s.sd * s.sd;
        Ok(T3Kernel {
            x_d: summ_r.mean - summ_t.mean,
            c_r: v2(summ_r) / summ_r.n as f64,
            c_t: v2(summ_t) / summ_t.n as f64,
            v_r: v2(summ_r).sqrt(),
            v_t: v2(summ_t).sqrt(),
            z: if kappa == 0.5 {
                0.0
            } else {
                -quantile_unchecked(kappa)
            },
        })
    }

    /// `x̄_R - x̄_T`.
    pub fn mean_difference(&self) -> f64 {
        self.x_d
    }

    #[inline]
    pub fn pivot(&self, d: &DrawVector) -> f64 {
        let inv_r = 1.0 / d.u2_r;
        let inv_t = 1.0 / d.u2_t;
        let spread = (self.c_r * inv_r + self.c_t * inv_t).sqrt();
        -d.z * spread + self.z * (self.v_r * inv_r.sqrt() - self.v_t * inv_t.sqrt())
    }

    #[inline]
    pub fn upper(&self, d: &DrawVector) -> f64 {
        self.x_d + self.pivot(d)
    }

    #[inline]
    pub fn lower(&self, d: &DrawVector) -> f64 {
        -self.x_d + self.pivot(d)
    }

    #[inline]
    pub fn two_sided(&self, d: &DrawVector) -> f64 {
        -self.x_d.abs() + self.pivot(d)
    }
}

/// `T3^u`: pivot for `Q^R_(1-κ) - Q^T_(1-κ)`.
pub fn t3_upper(
    summ_r: &SampleSummary,
    summ_t: &SampleSummary,
    kappa: f64,
    d: &DrawVector,
) -> Result<f64> {
    Ok(T3Kernel::new(summ_r, summ_t, kappa)?.upper(d))
}

/// `T3^l`: pivot for `Q^T_κ - Q^R_κ`.
pub fn t3_lower(
    summ_r: &SampleSummary,
    summ_t: &SampleSummary,
    kappa: f64,
    d: &DrawVector,
) -> Result<f64> {
    Ok(T3Kernel::new(summ_r, summ_t, kappa)?.lower(d))
}

/// `T|3|`, the smaller of the two one-sided statistics.
pub fn t3_abs(
    summ_r: &SampleSummary,
    summ_t: &SampleSummary,
    kappa: f64,
    d: &DrawVector,
) -> Result<f64> {
    Ok(T3Kernel::new(summ_r, summ_t, kappa)?.two_sided(d))
}

/// The five generalized p-values from one set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpvResult {
    /// `P(T3^u > 0)`
    pub p_u: f64,
    /// `P(T3^l > 0)`
    pub p_l: f64,
    /// `P(T|3| > 0)`
    pub p_abs: f64,
    /// `P(T3^u < 0)`, the reversed (pretest) p-value
    pub pbar_u: f64,
    /// `P(T3^l < 0)`
    pub pbar_l: f64,
    pub n_draws: usize,
}

impl GpvResult {
    pub fn pbar_min(&self) -> f64 {
        self.pbar_u.min(self.pbar_l)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    u_pos: u64,
    u_neg: u64,
    l_pos: u64,
    l_neg: u64,
    abs_pos: u64,
}

/// Estimates all five generalized p-values on the same `n_draws` pivotal
/// triples from `stream`. Ties at exactly zero count for neither side.
pub fn estimate_gpv(
    summ_r: &SampleSummary,
    summ_t: &SampleSummary,
    kappa: f64,
    n_draws: usize,
    stream: RngStream,
) -> Result<GpvResult> {
    if n_draws == 0 {
        return Err(Error::domain("n_draws must be at least 1"));
    }
    let kernel = T3Kernel::new(summ_r, summ_t, kappa)?;
    let sampler = PivotSampler::new(summ_r.n, summ_t.n)?;
    let mut rng = stream.rng();

    let mut c = Counts::default();
    for _ in 0..n_draws {
        let d = sampler.draw(&mut rng);
        let t_u = kernel.upper(&d);
        let t_l = kernel.lower(&d);
        let t_abs = kernel.two_sided(&d);
        c.u_pos += (t_u > 0.0) as u64;
        c.u_neg += (t_u < 0.0) as u64;
        c.l_pos += (t_l > 0.0) as u64;
        c.l_neg += (t_l < 0.0) as u64;
        c.abs_pos += (t_abs > 0.0) as u64;
    }

    let n = n_draws as f64;
    Ok(GpvResult {
        p_u: c.u_pos as f64 / n,
        p_l: c.l_pos as f64 / n,
        p_abs: c.abs_pos as f64 / n,
        pbar_u: c.u_neg as f64 / n,
        pbar_l: c.l_neg as f64 / n,
        n_draws,
    })
}
