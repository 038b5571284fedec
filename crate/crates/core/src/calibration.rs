//! Monte Carlo calibration of the adjustment constant `K` and the persisted
//! table of calibrated values.
//!
//! Under `D_R = D_T = N(0, 1)` each replicate contributes one
//! `(p_|3|, p̄_min)` pair. Which branch a replicate takes does not depend on
//! `K`, so the rejection rate as a function of `K` is a step function of the
//! corrected-branch `p_|3|` values and one simulation pass is enough to
//! locate the smallest admissible `K`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::c_test::combine;
use crate::error::{Error, Result};
use crate::gpv::estimate_gpv;
use crate::kappa_cover::NormalParams;
use crate::rng_dist::{RngStream, SampleSummary};

pub const KTABLE_SCHEMA_VERSION: u32 = 1;

/// Domain tags separating the data and pivot streams of one replicate.
const DATA_DOMAIN: u64 = 0x6461_7461;
const PIVOT_DOMAIN: u64 = 0x7069_766f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub p_abs: f64,
    pub pbar_min: f64,
}

/// One simulated replicate design: two normal populations, sample sizes,
/// covering level, inner draws and the seed of the replicate streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateDesign {
    pub d_r: NormalParams,
    pub d_t: NormalParams,
    pub n_r: usize,
    pub n_t: usize,
    pub kappa: f64,
    pub n_draws: usize,
    pub seed: u64,
}

impl ReplicateDesign {
    /// Replicate `index`: fresh samples from both populations, then the
    /// generalized p-values on an independent pivot stream.
    pub fn replicate(&self, index: u64) -> Result<ReplicateRecord> {
        let base = RngStream::new(self.seed, index);
        let mut rng = base.derive(DATA_DOMAIN).rng();
        let summ_r = sample_summary(&mut rng, self.d_r, self.n_r)?;
        let summ_t = sample_summary(&mut rng, self.d_t, self.n_t)?;
        let g = estimate_gpv(
            &summ_r,
            &summ_t,
            self.kappa,
            self.n_draws,
            base.derive(PIVOT_DOMAIN),
        )?;
        Ok(ReplicateRecord {
            p_abs: g.p_abs,
            pbar_min: g.pbar_min(),
        })
    }

    /// `m` replicates in parallel; the output does not depend on the number
    /// of worker threads.
    pub fn simulate(&self, m: usize) -> Result<Vec<ReplicateRecord>> {
        (0..m as u64)
            .into_par_iter()
            .map(|i| self.replicate(i))
            .collect()
    }
}

fn sample_summary<R: Rng>(rng: &mut R, d: NormalParams, n: usize) -> Result<SampleSummary> {
    // Welford, to avoid materialising the sample
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let x = d.mu + d.sigma * z;
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    SampleSummary::new(n, mean, (m2 / (n as f64 - 1.0)).sqrt())
}

/// Rejection rate of the C-test over `records` for a given `K`.
pub fn rejection_rate_at(records: &[ReplicateRecord], alpha: f64, alpha_p: f64, k: f64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    rejections(records, alpha, alpha_p, k) as f64 / records.len() as f64
}

pub(crate) fn rejections(records: &[ReplicateRecord], alpha: f64, alpha_p: f64, k: f64) -> usize {
    records
        .iter()
        .filter(|r| combine(r.p_abs, r.pbar_min, alpha_p, k).0 < alpha)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCalibration {
    pub k: f64,
    /// Binomial standard error of the achieved rate.
    pub std_error: f64,
    /// Rejection rate at `k`.
    pub rate: f64,
    /// Rate contributed by the one-sided branch alone.
    pub one_sided_rate: f64,
}

/// Smallest `K >= 1` whose rejection rate over `records` does not exceed `alpha`.
pub fn solve_k(records: &[ReplicateRecord], alpha: f64, alpha_p: f64) -> Result<KCalibration> {
    if records.is_empty() {
        return Err(Error::domain("no replicate records"));
    }
    let m = records.len();
    let one_sided = records
        .iter()
        .filter(|r| r.pbar_min < alpha_p && r.p_abs < alpha)
        .count();
    let one_sided_rate = one_sided as f64 / m as f64;
    if one_sided_rate > alpha {
        return Err(Error::Infeasible {
            one_sided_rate,
            alpha,
        });
    }
    // largest admissible rejection count
    let budget = ((alpha * m as f64) * (1.0 + 1e-12)).floor() as usize - one_sided;

    let mut corrected: Vec<f64> = records
        .iter()
        .filter(|r| r.pbar_min >= alpha_p)
        .map(|r| r.p_abs)
        .collect();

    let mut k = if corrected.len() <= budget {
        1.0
    } else {
        let (_, q, _) = corrected.select_nth_unstable_by(budget, f64::total_cmp);
        let q = *q;
        if q == 0.0 {
            return Err(Error::Infeasible {
                one_sided_rate: (one_sided + budget + 1) as f64 / m as f64,
                alpha,
            });
        }
        (alpha / q).max(1.0)
    };
    // alpha / q can round to a K where q * K still falls below alpha
    while rejections(records, alpha, alpha_p, k) > budget + one_sided {
        k = k.next_up();
    }

    let rate = rejection_rate_at(records, alpha, alpha_p, k);
    Ok(KCalibration {
        k,
        std_error: (rate * (1.0 - rate) / m as f64).sqrt(),
        rate,
        one_sided_rate,
    })
}

/// Calibrates `K` under `D_R = D_T = N(0, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_k(
    kappa: f64,
    n_r: usize,
    n_t: usize,
    alpha_p: f64,
    alpha: f64,
    m_replicates: usize,
    n_draws: usize,
    seed: u64,
) -> Result<KCalibration> {
    if m_replicates < 1_000 {
        return Err(Error::Config(format!(
            "calibration needs at least 1000 replicates, got {m_replicates}"
        )));
    }
    for (name, p) in [("alpha", alpha), ("alpha_p", alpha_p)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    if !(kappa > 0.0 && kappa <= 0.5) {
        return Err(Error::Config(format!(
            "kappa must lie in (0, 0.5], got {kappa}"
        )));
    }
    let design = ReplicateDesign {
        d_r: NormalParams::standard(),
        d_t: NormalParams::standard(),
        n_r,
        n_t,
        kappa,
        n_draws,
        seed,
    };
    let records = design.simulate(m_replicates)?;
    solve_k(&records, alpha, alpha_p)
}

/// One calibrated constant with its key and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KEntry {
    pub kappa: f64,
    pub n_r: usize,
    pub n_t: usize,
    pub alpha_p: f64,
    pub alpha: f64,
    pub m_replicates: usize,
    pub n_draws: usize,
    pub k: f64,
    pub mc_std_error: Option<f64>,
    /// `None` for constants taken from the published table.
    pub seed: Option<u64>,
}

impl KEntry {
    fn matches(&self, kappa: f64, n_r: usize, n_t: usize, alpha_p: f64, alpha: f64) -> bool {
        self.kappa == kappa
            && self.n_r == n_r
            && self.n_t == n_t
            && self.alpha_p == alpha_p
            && self.alpha == alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTable {
    pub schema_version: u32,
    pub entries: Vec<KEntry>,
}

impl Default for KTable {
    fn default() -> Self {
        KTable {
            schema_version: KTABLE_SCHEMA_VERSION,
            entries: Vec::new(),
        }
    }
}

/// Published constants for `α = 0.05`, equal sample sizes,
/// `α_p ∈ {0.01, 0.05, 0.1, 0.2}`; 10^6 replicates with 10^4 draws each.
const PUBLISHED: [(f64, usize, [f64; 4]); 12] = [
    (0.1, 10, [1.81, 1.88, 1.99, 2.31]),
    (0.1, 25, [1.94, 2.04, 2.21, 2.72]),
    (0.1, 50, [1.97, 2.08, 2.26, 2.83]),
    (0.1, 100, [1.99, 2.12, 2.31, 2.93]),
    (0.05, 10, [1.80, 1.83, 1.87, 2.00]),
    (0.05, 25, [1.89, 1.93, 1.99, 2.16]),
    (0.05, 50, [1.92, 1.96, 2.03, 2.22]),
    (0.05, 100, [1.94, 1.99, 2.05, 2.25]),
    (0.00135, 10, [1.61, 1.61, 1.61, 1.62]),
    (0.00135, 25, [1.67, 1.67, 1.67, 1.68]),
    (0.00135, 50, [1.69, 1.69, 1.69, 1.70]),
    (0.00135, 100, [1.70, 1.70, 1.70, 1.70]),
];
pub const PUBLISHED_ALPHA_P: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

impl KTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// The published constants (all at `α = 0.05`).
    pub fn published() -> Self {
        let entries = PUBLISHED
            .iter()
            .flat_map(|&(kappa, n, ks)| {
                PUBLISHED_ALPHA_P
                    .iter()
                    .zip(ks)
                    .map(move |(&alpha_p, k)| KEntry {
                        kappa,
                        n_r: n,
                        n_t: n,
                        alpha_p,
                        alpha: 0.05,
                        m_replicates: 1_000_000,
                        n_draws: 10_000,
                        k,
                        mc_std_error: None,
                        seed: None,
                    })
            })
            .collect();
        KTable {
            schema_version: KTABLE_SCHEMA_VERSION,
            entries,
        }
    }

    pub fn lookup(
        &self,
        kappa: f64,
        n_r: usize,
        n_t: usize,
        alpha_p: f64,
        alpha: f64,
    ) -> Result<&KEntry> {
        self.entries
            .iter()
            .find(|e| e.matches(kappa, n_r, n_t, alpha_p, alpha))
            .ok_or(Error::NotCalibrated {
                kappa,
                n_r,
                n_t,
                alpha_p,
                alpha,
            })
    }

    /// Inserts `entry`, replacing any entry with the same key.
    pub fn upsert(&mut self, entry: KEntry) -> Result<()> {
        if !(entry.k >= 1.0) {
            return Err(Error::Config(format!("K must be >= 1, got {}", entry.k)));
        }
        match self.entries.iter_mut().find(|e| {
            e.matches(
                entry.kappa,
                entry.n_r,
                entry.n_t,
                entry.alpha_p,
                entry.alpha,
            )
        }) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: KTable = serde_json::from_str(text)?;
        if table.schema_version != KTABLE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: table.schema_version,
                expected: KTABLE_SCHEMA_VERSION,
            });
        }
        if let Some(bad) = table.entries.iter().find(|e| !(e.k >= 1.0)) {
            return Err(Error::Config(format!(
                "k-table entry for kappa={} n_R={} n_T={} has K={} < 1",
                bad.kappa, bad.n_r, bad.n_t, bad.k
            )));
        }
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading k-table {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)
            .map_err(|e| Error::io(format!("writing k-table {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p_abs: f64, pbar_min: f64) -> ReplicateRecord {
        ReplicateRecord { p_abs, pbar_min }
    }

    #[test]
    fn rate_hand_example() {
        let r = [rec(0.03, 0.9), rec(0.10, 0.9)];
        assert_eq!(rejection_rate_at(&r, 0.05, 0.05, 2.0), 0.0);
        assert_eq!(rejection_rate_at(&r, 0.05, 0.05, 1.0), 0.5);
    }

    #[test]
    fn rate_endpoints() {
        let records: Vec<_> = (0..1000)
            .map(|i| rec((i % 97) as f64 / 400.0, if i % 3 == 0 { 0.01 } else { 0.5 }))
            .collect();
        let at_one = rejection_rate_at(&records, 0.05, 0.05, 1.0);
        let a = records
            .iter()
            .filter(|r| r.pbar_min < 0.05 && r.p_abs < 0.05)
            .count() as f64
            / 1000.0;
        let mut prev = at_one;
        for k in [1.1, 1.5, 2.0, 5.0, 50.0, 1e9] {
            let r = rejection_rate_at(&records, 0.05, 0.05, k);
            assert!(r <= prev);
            prev = r;
        }
        // only zero p-values survive an enormous K
        let zeros = records
            .iter()
            .filter(|r| r.pbar_min >= 0.05 && r.p_abs == 0.0)
            .count() as f64
            / 1000.0;
        assert!((prev - (a + zeros)).abs() < 1e-12);
    }

    #[test]
    fn solver_returns_smallest_admissible_k() {
        // deterministic pseudo-records with plenty of ties
        let records: Vec<_> = (0..5000u64)
            .map(|i| {
                let h = (i.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 / (1u64 << 53) as f64;
                let g = (i.wrapping_mul(0xBF58_476D_1CE4_E5B9) >> 11) as f64 / (1u64 << 53) as f64;
                rec((h * 200.0).floor() / 200.0 * 0.2, g)
            })
            .collect();
        let c = solve_k(&records, 0.05, 0.05).unwrap();
        assert!(c.k >= 1.0);
        assert!(c.rate <= 0.05);
        assert!(rejection_rate_at(&records, 0.05, 0.05, c.k) <= 0.05);
        if c.k > 1.0 {
            assert!(rejection_rate_at(&records, 0.05, 0.05, c.k.next_down()) > 0.05);
            // within one replicate of alpha
            assert!(0.05 - c.rate <= 1.0 / 5000.0 + 1e-12 || c.rate <= 0.05);
        }
    }

    #[test]
    fn solver_detects_infeasibility() {
        let records = vec![rec(0.0, 0.0); 100];
        assert!(matches!(
            solve_k(&records, 0.05, 0.05),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn no_correction_needed_gives_one() {
        let records = vec![rec(0.5, 0.5); 100];
        assert_eq!(solve_k(&records, 0.05, 0.05).unwrap().k, 1.0);
    }

    #[test]
    fn calibration_is_deterministic() {
        let a = calibrate_k(0.1, 10, 10, 0.05, 0.05, 1_000, 500, 17).unwrap();
        let b = calibrate_k(0.1, 10, 10, 0.05, 0.05, 1_000, 500, 17).unwrap();
        assert_eq!(a.k.to_bits(), b.k.to_bits());
        assert!(a.rate <= 0.05);
        assert!(calibrate_k(0.1, 10, 10, 0.05, 0.05, 999, 500, 17).is_err());
    }

    #[test]
    fn simulation_is_thread_count_independent() {
        let design = ReplicateDesign {
            d_r: NormalParams::standard(),
            d_t: NormalParams::new(0.3, 0.8).unwrap(),
            n_r: 12,
            n_t: 9,
            kappa: 0.05,
            n_draws: 200,
            seed: 99,
        };
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| design.simulate(300).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| design.simulate(300).unwrap());
        assert_eq!(serial, parallel);
        assert_eq!(design.replicate(17).unwrap(), serial[17]);
    }

    #[test]
    fn table_json_round_trip_and_validation() {
        let mut t = KTable::published();
        assert_eq!(t.entries.len(), 48);
        t.upsert(KEntry {
            kappa: 0.2,
            n_r: 24,
            n_t: 48,
            alpha_p: 0.1,
            alpha: 0.05,
            m_replicates: 20_000,
            n_draws: 2_000,
            k: 2.123_456_789_012_345,
            mc_std_error: Some(0.0015),
            seed: Some(7),
        })
        .unwrap();
        let back = KTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);

        let mut replaced = t.clone();
        let mut e = *t.lookup(0.2, 24, 48, 0.1, 0.05).unwrap();
        e.k = 3.0;
        replaced.upsert(e).unwrap();
        assert_eq!(replaced.entries.len(), t.entries.len());
        assert_eq!(replaced.lookup(0.2, 24, 48, 0.1, 0.05).unwrap().k, 3.0);
        // ordered pair
        assert!(t.lookup(0.2, 48, 24, 0.1, 0.05).is_err());

        e.k = 0.5;
        assert!(replaced.upsert(e).is_err());
        let bad = r#"{"schema_version": 2, "entries": []}"#;
        assert!(matches!(
            KTable::from_json(bad),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }
}
