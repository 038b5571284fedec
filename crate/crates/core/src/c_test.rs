//! The adaptive covering test (C-test).
//!
//! A reversed-hypothesis pretest decides whether one quantile pair is clearly
//! separated (`p̄_min < α_p`). If so the two-sided p-value is used as is;
//! otherwise it is inflated by the calibrated constant `K`.

use serde::{Deserialize, Serialize};

use crate::calibration::KTable;
use crate::error::{Error, Result};
use crate::gpv::{estimate_gpv, GpvResult, DEFAULT_DRAWS};
use crate::rng_dist::{summarize, Probability, RngStream, SampleSummary};

/// Pretest threshold used when none is given.
pub const DEFAULT_ALPHA_P: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CTestConfig {
    pub kappa: Probability,
    pub alpha: Probability,
    pub alpha_p: Probability,
    pub k_adjust: f64,
    pub n_draws: usize,
    pub seed: u64,
}

impl CTestConfig {
    pub fn new(kappa: f64, alpha: f64, alpha_p: f64, k_adjust: f64) -> Result<Self> {
        let cfg = CTestConfig {
            kappa: Probability::new(kappa).map_err(config_err("kappa"))?,
            alpha: Probability::new(alpha).map_err(config_err("alpha"))?,
            alpha_p: Probability::new(alpha_p).map_err(config_err("alpha_p"))?,
            k_adjust,
            n_draws: DEFAULT_DRAWS,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_draws(mut self, n_draws: usize) -> Self {
        self.n_draws = n_draws;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa.get() > 0.5 {
            return Err(Error::Config(format!(
                "kappa must lie in (0, 0.5], got {}",
                self.kappa.get()
            )));
        }
        if !(self.k_adjust >= 1.0) || !self.k_adjust.is_finite() {
            return Err(Error::Config(format!(
                "adjustment constant K must be a finite value >= 1, got {}",
                self.k_adjust
            )));
        }
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be at least 1".into()));
        }
        Ok(())
    }
}

fn config_err(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Config(format!("{name}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Pretest significant: unadjusted `p_|3|`.
    OneSided,
    /// Pretest not significant: `K * p_|3|`.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CTestResult {
    pub p_c: f64,
    pub p_abs: f64,
    pub pbar_min: f64,
    pub branch: Branch,
    pub reject: bool,
    pub gpv: GpvResult,
    pub summary_r: SampleSummary,
    pub summary_t: SampleSummary,
}

/// Combines the generalized p-values into `p_C`, capped at 1.
pub fn combine_p(gpv: &GpvResult, alpha_p: f64, k_adjust: f64) -> (f64, Branch) {
    combine(gpv.p_abs, gpv.pbar_min(), alpha_p, k_adjust)
}

#[inline]
pub(crate) fn combine(p_abs: f64, pbar_min: f64, alpha_p: f64, k_adjust: f64) -> (f64, Branch) {
    if pbar_min < alpha_p {
        (p_abs, Branch::OneSided)
    } else {
        ((p_abs * k_adjust).min(1.0), Branch::Corrected)
    }
}

/// Runs the C-test on raw samples.
pub fn run_c_test(sample_r: &[f64], sample_t: &[f64], cfg: &CTestConfig) -> Result<CTestResult> {
    let summ_r = summarize_named(sample_r, "reference")?;
    let summ_t = summarize_named(sample_t, "test")?;
    c_test_from_summaries(&summ_r, &summ_t, cfg, RngStream::new(cfg.seed, 0))
}

fn summarize_named(sample: &[f64], name: &str) -> Result<SampleSummary> {
    let s = summarize(sample).map_err(|e| match e {
        Error::InsufficientData { got, need } => Error::Config(format!(
            "{name} sample has {got} observation(s), at least {need} required"
        )),
        Error::Domain(msg) => Error::Domain(format!("{name} sample: {msg}")),
        other => other,
    })?;
    if s.is_degenerate() {
        return Err(Error::DegenerateSample {
            sample: name.into(),
            sd: s.sd,
        });
    }
    Ok(s)
}

/// The C-test on sufficient statistics with an explicit draw stream.
pub fn c_test_from_summaries(
    summ_r: &SampleSummary,
    summ_t: &SampleSummary,
    cfg: &CTestConfig,
    stream: RngStream,
) -> Result<CTestResult> {
    cfg.validate()?;
    let gpv = estimate_gpv(summ_r, summ_t, cfg.kappa.get(), cfg.n_draws, stream)?;
    let (p_c, branch) = combine_p(&gpv, cfg.alpha_p.get(), cfg.k_adjust);
    Ok(CTestResult {
        p_c,
        p_abs: gpv.p_abs,
        pbar_min: gpv.pbar_min(),
        branch,
        reject: p_c < cfg.alpha.get(),
        gpv,
        summary_r: *summ_r,
        summary_t: *summ_t,
    })
}

/// Exact-key lookup of `K`; no interpolation.
pub fn lookup_k(
    table: &KTable,
    kappa: f64,
    n_r: usize,
    n_t: usize,
    alpha_p: f64,
    alpha: f64,
) -> Result<f64> {
    table.lookup(kappa, n_r, n_t, alpha_p, alpha).map(|e| e.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gpv(p_abs: f64, pbar_u: f64, pbar_l: f64) -> GpvResult {
        GpvResult {
            p_u: 1.0 - pbar_u,
            p_l: 1.0 - pbar_l,
            p_abs,
            pbar_u,
            pbar_l,
            n_draws: 10_000,
        }
    }

    fn normal_sample(seed: u64, n: usize, mu: f64, sigma: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mu, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn combine_examples() {
        assert_eq!(
            combine_p(&gpv(0.03, 0.001, 0.9), 0.05, 2.0),
            (0.03, Branch::OneSided)
        );
        assert_eq!(
            combine_p(&gpv(0.03, 0.5, 0.6), 0.05, 2.0),
            (0.06, Branch::Corrected)
        );
        assert_eq!(
            combine_p(&gpv(0.8, 0.5, 0.5), 0.05, 1.81),
            (1.0, Branch::Corrected)
        );
        // threshold is strict
        assert_eq!(
            combine_p(&gpv(0.03, 0.05, 0.9), 0.05, 2.0).1,
            Branch::Corrected
        );
    }

    #[test]
    fn config_validation() {
        assert!(CTestConfig::new(0.05, 0.05, 0.1, 1.9).is_ok());
        assert!(matches!(
            CTestConfig::new(0.6, 0.05, 0.1, 1.9),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CTestConfig::new(0.05, 1.0, 0.1, 1.9),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CTestConfig::new(0.05, 0.05, 0.0, 1.9),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CTestConfig::new(0.05, 0.05, 0.1, 0.9),
            Err(Error::Config(_))
        ));
        assert!(CTestConfig::new(0.5, 0.05, 0.1, 1.0).is_ok());
    }

    #[test]
    fn grossly_violated_upper_quantile_is_rejected() {
        let r = normal_sample(1, 50, 0.0, 1.0);
        let t = normal_sample(2, 50, 10.0, 0.01);
        let cfg = CTestConfig::new(0.05, 0.05, 0.1, 1.93)
            .unwrap()
            .with_seed(3);
        let res = run_c_test(&r, &t, &cfg).unwrap();
        assert!(res.reject);
        assert!(res.p_c < 0.001);
        assert_eq!(res.branch, Branch::OneSided);
    }

    #[test]
    fn same_data_takes_symmetric_path() {
        let r = normal_sample(4, 25, 0.0, 1.0);
        let cfg = CTestConfig::new(0.05, 0.05, 0.05, 1.93)
            .unwrap()
            .with_seed(8);
        let res = run_c_test(&r, &r, &cfg).unwrap();
        assert_eq!(res.gpv.p_u, res.gpv.p_l);
        assert_eq!(res.gpv.p_u, res.p_abs);
        if res.pbar_min >= 0.05 {
            assert_eq!(res.branch, Branch::Corrected);
        }
        assert!(!res.reject);
    }

    #[test]
    fn degenerate_samples_are_named() {
        let good = [1.0, 2.0, 3.0];
        let cfg = CTestConfig::new(0.05, 0.05, 0.1, 2.0)
            .unwrap()
            .with_draws(100);
        match run_c_test(&good, &[2.0, 2.0, 2.0], &cfg) {
            Err(Error::DegenerateSample { sample, .. }) => assert_eq!(sample, "test"),
            other => panic!("unexpected {other:?}"),
        }
        match run_c_test(&[7.0], &good, &cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("reference")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn published_table_lookup() {
        let t = KTable::published();
        assert_eq!(lookup_k(&t, 0.1, 10, 10, 0.01, 0.05).unwrap(), 1.81);
        assert_eq!(lookup_k(&t, 0.00135, 100, 100, 0.2, 0.05).unwrap(), 1.70);
        assert!(matches!(
            lookup_k(&t, 0.07, 30, 30, 0.05, 0.05),
            Err(Error::NotCalibrated { .. })
        ));
        // alpha must match the calibration alpha
        assert!(lookup_k(&t, 0.1, 10, 10, 0.01, 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn p_c_dominates_p_abs(
            p_abs in 0.0..=1.0f64, pu in 0.0..=1.0f64, pl in 0.0..=1.0f64,
            ap in 0.001..0.999f64, k in 1.0..5.0f64,
        ) {
            let g = gpv(p_abs, pu, pl);
            let (pc, _) = combine_p(&g, ap, k);
            prop_assert!(pc >= p_abs);
            prop_assert!(pc <= 1.0);
            prop_assert_eq!(combine_p(&g, ap, 1.0).0, p_abs);
        }

        #[test]
        fn decision_is_monotone_in_alpha(
            seed in any::<u64>(), shift in -1.0..1.0f64, a1 in 0.01..0.2f64, extra in 0.0..0.3f64,
        ) {
            let r = normal_sample(seed, 15, 0.0, 1.0);
            let t = normal_sample(seed ^ 1, 15, shift, 0.8);
            let c1 = CTestConfig::new(0.1, a1, 0.05, 1.9).unwrap().with_draws(1_000).with_seed(seed);
            let mut c2 = c1;
            c2.alpha = Probability::new((a1 + extra).min(0.99)).unwrap();
            let (x, y) = (run_c_test(&r, &t, &c1).unwrap(), run_c_test(&r, &t, &c2).unwrap());
            prop_assert_eq!(x.p_c, y.p_c);
            if x.reject { prop_assert!(y.reject); }
        }
    }
}
