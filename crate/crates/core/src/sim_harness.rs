//! Operating-characteristic experiments for the C-test: rejection rates on
//! the boundary of the null region, power at fixed alternatives, boundary
//! sweeps and rejection-probability grids.
//!
//! Every cell is simulated from its own seed; cells that share a seed share
//! their underlying random numbers, which keeps curves over `μ_T` or `α_p`
//! smooth and comparisons between neighbouring cells paired.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{rejection_rate_at, rejections, KTable, ReplicateDesign, ReplicateRecord};
use crate::error::{Error, Result};
use crate::kappa_cover::{boundary_sigma, NormalParams};
use crate::rng_dist::quantile_unchecked;

/// Desk-scale replicate count.
pub const DESK_REPLICATES: usize = 20_000;
/// Desk-scale inner draws per p-value.
pub const DESK_DRAWS: usize = 2_000;
pub const FULL_REPLICATES: usize = 100_000;
pub const FULL_DRAWS: usize = 10_000;

/// How the test distribution of a cell is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestDistribution {
    Fixed(NormalParams),
    /// On the upper leg of the null boundary against `N(0, 1)`.
    Boundary {
        mu_t: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSpec {
    pub d_r: NormalParams,
    pub d_t: TestDistribution,
    pub n_r: usize,
    pub n_t: usize,
    pub kappa: f64,
    pub alpha: f64,
    pub alpha_p: f64,
    pub m_replicates: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Desk-scale cell against `D_R = N(0, 1)` with equal sample sizes.
    pub fn desk(d_t: TestDistribution, n: usize, kappa: f64, alpha_p: f64, seed: u64) -> Self {
        ExperimentSpec {
            d_r: NormalParams::standard(),
            d_t,
            n_r: n,
            n_t: n,
            kappa,
            alpha: 0.05,
            alpha_p,
            m_replicates: DESK_REPLICATES,
            n_draws: DESK_DRAWS,
            seed,
        }
    }

    pub fn test_params(&self) -> Result<NormalParams> {
        match self.d_t {
            TestDistribution::Fixed(p) => Ok(p),
            TestDistribution::Boundary { mu_t } => {
                NormalParams::new(mu_t, boundary_sigma(mu_t, self.kappa)?)
            }
        }
    }

    fn design(&self) -> Result<ReplicateDesign> {
        if self.m_replicates == 0 || self.n_draws == 0 {
            return Err(Error::Config(
                "replicates and draws must be positive".into(),
            ));
        }
        Ok(ReplicateDesign {
            d_r: self.d_r,
            d_t: self.test_params()?,
            n_r: self.n_r,
            n_t: self.n_t,
            kappa: self.kappa,
            n_draws: self.n_draws,
            seed: self.seed,
        })
    }

    /// The per-replicate `(p_|3|, p̄_min)` pairs. They do not depend on `α`,
    /// `α_p` or `K`.
    pub fn simulate_records(&self) -> Result<Vec<ReplicateRecord>> {
        self.design()?.simulate(self.m_replicates)
    }

    /// Result of this cell from already simulated records.
    pub fn evaluate(&self, records: &[ReplicateRecord], k: f64) -> Result<ExperimentResult> {
        let t = self.test_params()?;
        let rate = rejection_rate_at(records, self.alpha, self.alpha_p, k);
        let m = records.len() as f64;
        let one_sided = records.iter().filter(|r| r.pbar_min < self.alpha_p).count() as f64 / m;
        Ok(ExperimentResult {
            kappa: self.kappa,
            n_r: self.n_r,
            n_t: self.n_t,
            alpha_p: self.alpha_p,
            alpha: self.alpha,
            mu_t: t.mu,
            sigma_t: t.sigma,
            k,
            m_replicates: records.len(),
            n_draws: self.n_draws,
            seed: self.seed,
            rejection_rate: rate,
            std_error: (rate * (1.0 - rate) / m).sqrt(),
            one_sided_fraction: one_sided,
        })
    }

    pub fn key(&self, k: f64) -> Result<CellKey> {
        let t = self.test_params()?;
        Ok(CellKey::new(
            self.kappa,
            self.n_r,
            self.n_t,
            self.alpha_p,
            self.alpha,
            t.mu,
            t.sigma,
            k,
            self.m_replicates,
            self.n_draws,
            self.seed,
        ))
    }
}

/// One CSV row of the long-format output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kappa: f64,
    #[serde(rename = "n_R")]
    pub n_r: usize,
    #[serde(rename = "n_T")]
    pub n_t: usize,
    pub alpha_p: f64,
    pub alpha: f64,
    #[serde(rename = "mu_T")]
    pub mu_t: f64,
    #[serde(rename = "sigma_T")]
    pub sigma_t: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "M")]
    pub m_replicates: usize,
    #[serde(rename = "N")]
    pub n_draws: usize,
    pub seed: u64,
    pub rejection_rate: f64,
    pub std_error: f64,
    /// Fraction of replicates where the pretest selected the one-sided branch.
    #[serde(skip)]
    pub one_sided_fraction: f64,
}

impl ExperimentResult {
    pub fn key(&self) -> CellKey {
        CellKey::new(
            self.kappa,
            self.n_r,
            self.n_t,
            self.alpha_p,
            self.alpha,
            self.mu_t,
            self.sigma_t,
            self.k,
            self.m_replicates,
            self.n_draws,
            self.seed,
        )
    }
}

pub const CSV_HEADER: &str =
    "kappa,n_R,n_T,alpha_p,alpha,mu_T,sigma_T,K,M,N,seed,rejection_rate,std_error";

/// Identity of a cell for resuming interrupted runs; floats compared bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey([u64; 11]);

impl CellKey {
    #[allow(clippy::too_many_arguments)]
    fn new(
        kappa: f64,
        n_r: usize,
        n_t: usize,
        alpha_p: f64,
        alpha: f64,
        mu_t: f64,
        sigma_t: f64,
        k: f64,
        m: usize,
        n: usize,
        seed: u64,
    ) -> Self {
        CellKey([
            kappa.to_bits(),
            n_r as u64,
            n_t as u64,
            alpha_p.to_bits(),
            alpha.to_bits(),
            mu_t.to_bits(),
            sigma_t.to_bits(),
            k.to_bits(),
            m as u64,
            n as u64,
            seed,
        ])
    }
}

/// Simulates one cell at adjustment constant `k`.
pub fn run_cell(spec: &ExperimentSpec, k: f64) -> Result<ExperimentResult> {
    if !(k >= 1.0) {
        return Err(Error::Config(format!("K must be >= 1, got {k}")));
    }
    let records = spec.simulate_records()?;
    spec.evaluate(&records, k)
}

/// Runs a cell with `K` looked up in `table`.
pub fn run_cell_with_table(spec: &ExperimentSpec, table: &KTable) -> Result<ExperimentResult> {
    let k = resolve_k(spec, table)?;
    run_cell(spec, k)
}

fn resolve_k(spec: &ExperimentSpec, table: &KTable) -> Result<f64> {
    Ok(table
        .lookup(spec.kappa, spec.n_r, spec.n_t, spec.alpha_p, spec.alpha)?
        .k)
}

/// Rates of one set of records at several `(α_p, K)` pairs. Replicates are
/// shared, so differences between the returned rates are paired.
pub fn paired_rates(records: &[ReplicateRecord], alpha: f64, settings: &[(f64, f64)]) -> Vec<f64> {
    settings
        .iter()
        .map(|&(alpha_p, k)| rejection_rate_at(records, alpha, alpha_p, k))
        .collect()
}

/// Standard error of `rate(a) - rate(b)` over shared records.
pub fn paired_std_error(
    records: &[ReplicateRecord],
    alpha: f64,
    a: (f64, f64),
    b: (f64, f64),
) -> f64 {
    let m = records.len() as f64;
    let (mut plus, mut minus) = (0usize, 0usize);
    for r in records {
        let one = std::slice::from_ref(r);
        let ra = rejections(one, alpha, a.0, a.1);
        let rb = rejections(one, alpha, b.0, b.1);
        match ra.cmp(&rb) {
            std::cmp::Ordering::Greater => plus += 1,
            std::cmp::Ordering::Less => minus += 1,
            std::cmp::Ordering::Equal => {}
        }
    }
    let d = (plus as f64 - minus as f64) / m;
    (((plus + minus) as f64 / m - d * d) / m).max(0.0).sqrt()
}

/// Common Monte Carlo settings of a batch of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessSettings {
    pub alpha: f64,
    pub m_replicates: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        HarnessSettings {
            alpha: 0.05,
            m_replicates: DESK_REPLICATES,
            n_draws: DESK_DRAWS,
            seed: 0,
        }
    }
}

/// Destination for completed cells.
pub trait CellSink {
    /// Whether this cell is already present (and can be skipped).
    fn contains(&self, key: &CellKey) -> bool;
    fn emit(&mut self, result: &ExperimentResult) -> Result<()>;
}

/// Discards results.
pub struct NullSink;

impl CellSink for NullSink {
    fn contains(&self, _: &CellKey) -> bool {
        false
    }
    fn emit(&mut self, _: &ExperimentResult) -> Result<()> {
        Ok(())
    }
}

/// Appends one CSV row per completed cell and remembers which cells an
/// existing file already holds.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
    done: HashSet<CellKey>,
    existing: Vec<ExperimentResult>,
}

impl CsvSink {
    pub fn open(path: &Path) -> Result<Self> {
        let existing = if path.exists()
            && std::fs::metadata(path)
                .map(|m| m.len() > 0)
                .unwrap_or(false)
        {
            read_results_csv(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let writer = csv::WriterBuilder::new()
            .has_headers(
                existing.is_empty() && file.metadata().map(|m| m.len() == 0).unwrap_or(true),
            )
            .from_writer(file);
        Ok(CsvSink {
            path: path.to_path_buf(),
            writer,
            done: existing.iter().map(ExperimentResult::key).collect(),
            existing,
        })
    }

    /// Rows that were present when the file was opened.
    pub fn existing(&self) -> &[ExperimentResult] {
        &self.existing
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl CellSink for CsvSink {
    fn contains(&self, key: &CellKey) -> bool {
        self.done.contains(key)
    }

    fn emit(&mut self, result: &ExperimentResult) -> Result<()> {
        self.writer.serialize(result)?;
        self.writer
            .flush()
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))?;
        self.done.insert(result.key());
        Ok(())
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ExperimentResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: format!("unexpected header `{headers}`"),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Runs `specs` in order, skipping cells `sink` already holds and emitting
/// each new result as soon as it completes. Returns the fresh results.
pub fn run_cells(
    specs: &[ExperimentSpec],
    table: &KTable,
    sink: &mut dyn CellSink,
) -> Result<Vec<ExperimentResult>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let k = resolve_k(spec, table).map_err(|e| cell_error(spec, e))?;
        if sink.contains(&spec.key(k)?) {
            continue;
        }
        let res = run_cell(spec, k).map_err(|e| cell_error(spec, e))?;
        sink.emit(&res)?;
        out.push(res);
    }
    Ok(out)
}

fn cell_error(spec: &ExperimentSpec, e: Error) -> Error {
    match e {
        Error::NotCalibrated { .. } => e,
        other => Error::Config(format!(
            "cell kappa={} n_R={} n_T={} alpha_p={} d_T={:?}: {other}",
            spec.kappa, spec.n_r, spec.n_t, spec.alpha_p, spec.d_t
        )),
    }
}

/// Boundary cells `μ_T = 0, step, ...` below `z_(1-κ)`, one block per `n`.
pub fn boundary_cells(
    kappa: f64,
    n_list: &[usize],
    alpha_p: f64,
    mu_step: f64,
    settings: &HarnessSettings,
) -> Result<Vec<ExperimentSpec>> {
    if !(mu_step > 0.0) {
        return Err(Error::Config(format!(
            "mu step must be positive, got {mu_step}"
        )));
    }
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::domain(format!(
            "kappa must lie in (0, 0.5), got {kappa}"
        )));
    }
    let z = -quantile_unchecked(kappa);
    let last = ((z - mu_step) / mu_step + 1e-9).floor();
    let count = if last < 0.0 { 0 } else { last as usize + 1 };
    let mut specs = Vec::with_capacity(count * n_list.len());
    for &n in n_list {
        for i in 0..count {
            specs.push(cell(
                TestDistribution::Boundary {
                    mu_t: i as f64 * mu_step,
                },
                n,
                kappa,
                alpha_p,
                settings,
            ));
        }
    }
    Ok(specs)
}

fn cell(
    d_t: TestDistribution,
    n: usize,
    kappa: f64,
    alpha_p: f64,
    s: &HarnessSettings,
) -> ExperimentSpec {
    ExperimentSpec {
        d_r: NormalParams::standard(),
        d_t,
        n_r: n,
        n_t: n,
        kappa,
        alpha: s.alpha,
        alpha_p,
        m_replicates: s.m_replicates,
        n_draws: s.n_draws,
        seed: s.seed,
    }
}

/// Rejection rates along the upper leg of the null boundary, ordered by `n`
/// then `μ_T`.
pub fn boundary_sweep(
    kappa: f64,
    n_list: &[usize],
    alpha_p: f64,
    mu_step: f64,
    settings: &HarnessSettings,
    table: &KTable,
    sink: &mut dyn CellSink,
) -> Result<Vec<ExperimentResult>> {
    let specs = boundary_cells(kappa, n_list, alpha_p, mu_step, settings)?;
    run_cells(&specs, table, sink)
}

fn axis(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::Config(format!(
            "invalid grid axis [{lo}, {hi}] with step {step}"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

/// Grid cells over `mu_range × sigma_range`, sigma-major.
pub fn grid_cells(
    kappa: f64,
    n: usize,
    alpha_p: f64,
    mu_range: (f64, f64),
    sigma_range: (f64, f64),
    grid_step: f64,
    settings: &HarnessSettings,
) -> Result<Vec<Vec<ExperimentSpec>>> {
    let mus = axis(mu_range, grid_step)?;
    let sigmas = axis(sigma_range, grid_step)?;
    sigmas
        .iter()
        .map(|&s| {
            mus.iter()
                .map(|&m| {
                    Ok(cell(
                        TestDistribution::Fixed(NormalParams::new(m, s)?),
                        n,
                        kappa,
                        alpha_p,
                        settings,
                    ))
                })
                .collect()
        })
        .collect()
}

/// Rejection probability over a `(μ_T, σ_T)` grid; rows are `σ_T` values.
#[allow(clippy::too_many_arguments)]
pub fn rejection_grid(
    kappa: f64,
    n: usize,
    alpha_p: f64,
    mu_range: (f64, f64),
    sigma_range: (f64, f64),
    grid_step: f64,
    settings: &HarnessSettings,
    table: &KTable,
    sink: &mut dyn CellSink,
) -> Result<Vec<Vec<ExperimentResult>>> {
    let rows = grid_cells(
        kappa,
        n,
        alpha_p,
        mu_range,
        sigma_range,
        grid_step,
        settings,
    )?;
    rows.iter().map(|row| run_cells(row, table, sink)).collect()
}
