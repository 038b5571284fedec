//! Deterministic random streams plus the normal and chi-square primitives
//! every statistic in the crate is built on.
//!
//! Streams are counter-based: a [`RngStream`] is a `(seed, stream_id)` pair
//! that maps onto one ChaCha8 keystream. Two streams with different ids never
//! overlap, and a stream's draws do not depend on which thread consumes it.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value strictly inside the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!(
                "probability {value} outside the open interval (0, 1)"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Same stream id under a seed derived from `domain`, so that different
    /// consumers of one replicate index never share draws.
    pub fn derive(&self, domain: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(domain)),
            stream_id: self.stream_id,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "normal CDF needs a finite argument, got {x}"
        )));
    }
    Ok(phi(x))
}

#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile `z_p`.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by a
/// Newton step against the erfc-based CDF. Upper-half arguments are reflected
/// onto the lower half, so `z_{1-p} == -z_p` whenever `1 - p` is exact.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    Ok(quantile_unchecked(p))
}

pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        -lower_quantile(1.0 - p)
    } else {
        lower_quantile(p)
    }
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p == 0.5 {
        return 0.0;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    x - (phi(x) - p) / density(x)
}

/// Sampler for pivotal triples with fixed sample sizes.
#[derive(Debug, Clone, Copy)]
pub struct PivotSampler {
    chi_r: ChiSquared<f64>,
    chi_t: ChiSquared<f64>,
}

impl PivotSampler {
    pub fn new(n_r: usize, n_t: usize) -> Result<Self> {
        Ok(PivotSampler {
            chi_r: chi_squared((n_r as f64) - 1.0)?,
            chi_t: chi_squared((n_t as f64) - 1.0)?,
        })
    }

    /// Draws `Z`, then `U_R^2`, then `U_T^2`.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawVector {
        let z: f64 = rng.sample(StandardNormal);
        let u2_r = self.chi_r.sample(rng);
        let u2_t = self.chi_t.sample(rng);
        DrawVector { z, u2_r, u2_t }
    }
}

/// Chi-square with `df >= 1` degrees of freedom (gamma with shape df/2, scale 2).
pub fn chi_squared(df: f64) -> Result<ChiSquared<f64>> {
    if !(df >= 1.0) || !df.is_finite() {
        return Err(Error::domain(format!(
            "chi-square degrees of freedom must be >= 1, got {df} (sample sizes must be >= 2)"
        )));
    }
    ChiSquared::new(df).map_err(|e| Error::domain(e.to_string()))
}

/// One pivotal triple `(Z, U_R^2, U_T^2)`, shared by all statistics of one
/// inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawVector {
    pub z: f64,
    pub u2_r: f64,
    pub u2_t: f64,
}

impl DrawVector {
    pub fn new(z: f64, u2_r: f64, u2_t: f64) -> Result<Self> {
        if !z.is_finite() || !(u2_r > 0.0) || !(u2_t > 0.0) {
            return Err(Error::domain(format!(
                "invalid draw (Z={z}, U_R^2={u2_r}, U_T^2={u2_t})"
            )));
        }
        Ok(DrawVector { z, u2_r, u2_t })
    }
}

/// First pivotal triple of `stream`.
pub fn draw_pivots(stream: RngStream, n_r: usize, n_t: usize) -> Result<DrawVector> {
    pivot_draws(stream, n_r, n_t).map(|mut it| it.next().expect("endless iterator"))
}

/// The endless sequence of pivotal triples carried by `stream`.
pub fn pivot_draws(
    stream: RngStream,
    n_r: usize,
    n_t: usize,
) -> Result<impl Iterator<Item = DrawVector>> {
    let sampler = PivotSampler::new(n_r, n_t)?;
    let mut rng = stream.rng();
    Ok(std::iter::repeat_with(move || sampler.draw(&mut rng)))
}

/// Sufficient statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SampleSummary {
    pub fn new(n: usize, mean: f64, sd: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientData { got: n, need: 2 });
        }
        if !mean.is_finite() || !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::domain(format!(
                "invalid summary mean={mean}, sd={sd}"
            )));
        }
        Ok(SampleSummary { n, mean, sd })
    }

    /// Zero spread; the T3 statistics are undefined for such a sample.
    pub fn is_degenerate(&self) -> bool {
        !(self.sd > 0.0)
    }
}

/// Mean and `n - 1` standard deviation. A zero SD is returned as-is; check
/// [`SampleSummary::is_degenerate`] before feeding it to a statistic.
pub fn summarize(sample: &[f64]) -> Result<SampleSummary> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientData { got: n, need: 2 });
    }
    if let Some((i, v)) = sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::domain(format!(
            "observation {} is not finite ({v})",
            i + 1
        )));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let ss: f64 = sample.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok(SampleSummary {
        n,
        mean,
        sd: (ss / (n - 1) as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent CDF: `0.5 + pdf(x) * sum x^(2k+1) / (2k+1)!!`.
    fn series_cdf(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            term *= x * x / (2.0 * k + 1.0);
            sum += term;
            k += 1.0;
        }
        0.5 + (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * sum
    }

    fn bisect_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if series_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.99865).unwrap() - 3.0).abs() < 1e-3);

        let oracle = bisect_oracle(0.975);
        assert!((oracle - 1.959_963_984_540_054).abs() < 1e-12);
        let z = std_normal_quantile(0.975).unwrap();
        assert!((z - 1.959_964).abs() < 1e-6);
        assert!((z - oracle).abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_oracle_on_grid() {
        for &p in &[1e-4, 0.001, 0.01, 0.02425, 0.1, 0.3, 0.7, 0.9, 0.99, 0.9999] {
            let z = std_normal_quantile(p).unwrap();
            assert!((z - bisect_oracle(p)).abs() < 1e-11, "p={p}");
            assert!((phi(z) - p).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn quantile_is_antisymmetric() {
        for &p in &[0.5f64.powi(20), 0.00135, 0.025, 0.1, 0.25, 0.375, 0.49] {
            let q = 1.0 - p;
            let lo = std_normal_quantile(1.0 - q).unwrap();
            let hi = std_normal_quantile(q).unwrap();
            assert_eq!(lo, -hi, "p={p}");
        }
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal_quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(-3.0).unwrap() - 0.00135).abs() < 1e-5);
        let oracle = series_cdf(2.0);
        assert!((oracle - 0.977_250).abs() < 1e-6);
        assert!((std_normal_cdf(2.0).unwrap() - oracle).abs() < 1e-14);
        assert!(std_normal_cdf(f64::INFINITY).is_err());
        assert!(std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn cdf_symmetry_and_monotonicity() {
        let mut prev = 0.0;
        for i in -800..=800 {
            let x = i as f64 / 100.0;
            let c = phi(x);
            assert!((c + phi(-x) - 1.0).abs() < 2.0 * f64::EPSILON);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn quantile_cdf_round_trip() {
        let lo: f64 = 1e-6;
        let steps = 20_000;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=steps {
            let p = lo + (1.0 - 2.0 * lo) * i as f64 / steps as f64;
            let z = std_normal_quantile(p).unwrap();
            assert!((phi(z) - p).abs() < 1e-10, "p={p}");
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn pivot_moments() {
        let draws: Vec<DrawVector> = pivot_draws(RngStream::new(7, 0), 10, 25)
            .unwrap()
            .take(1_000_000)
            .collect();
        let m = draws.len() as f64;
        let mean_z = draws.iter().map(|d| d.z).sum::<f64>() / m;
        let mean_r = draws.iter().map(|d| d.u2_r).sum::<f64>() / m;
        let var_r = draws.iter().map(|d| (d.u2_r - mean_r).powi(2)).sum::<f64>() / (m - 1.0);
        let mean_t = draws.iter().map(|d| d.u2_t).sum::<f64>() / m;
        assert!(mean_z.abs() < 0.005);
        assert!((mean_r - 9.0).abs() < 0.05);
        // 5-sigma bounds; Var(s^2) ~ (mu4 - sigma^4) / M = (8 df^2 + 48 df) / M
        assert!((mean_r - 9.0).abs() < 5.0 * (18.0 / m).sqrt());
        assert!((mean_t - 24.0).abs() < 5.0 * (48.0 / m).sqrt());
        let var_sd = ((8.0 * 81.0 + 48.0 * 9.0) / m).sqrt();
        assert!((var_r - 18.0).abs() < 5.0 * var_sd, "var {var_r}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = draw_pivots(RngStream::new(42, 3), 10, 10).unwrap();
        let b = draw_pivots(RngStream::new(42, 3), 10, 10).unwrap();
        assert_eq!(a.z.to_bits(), b.z.to_bits());
        assert_eq!(a.u2_r.to_bits(), b.u2_r.to_bits());
        assert_eq!(a.u2_t.to_bits(), b.u2_t.to_bits());
        let c = draw_pivots(RngStream::new(42, 4), 10, 10).unwrap();
        assert_ne!(a, c);
        let d = draw_pivots(RngStream::new(42, 3).derive(1), 10, 10).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn pivots_need_two_observations() {
        assert!(matches!(PivotSampler::new(1, 10), Err(Error::Domain(_))));
        assert!(PivotSampler::new(2, 2).is_ok());
        assert!(chi_squared(0.5).is_err());
        assert!(chi_squared(2.5).is_ok());
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.n, s.mean, s.sd), (3, 2.0, 1.0));
        let s = summarize(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.sd - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(matches!(
            summarize(&[5.0]),
            Err(Error::InsufficientData { got: 1, need: 2 })
        ));
        let flat = summarize(&[4.0, 4.0, 4.0]).unwrap();
        assert!(flat.is_degenerate());
        assert!(summarize(&[1.0, f64::NAN]).is_err());
    }
}
