//! Command-line workflow: sample ingestion, K resolution, reports and the
//! `kappa-cover` subcommands.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::c_test::{run_c_test, Branch, CTestConfig, CTestResult, DEFAULT_ALPHA_P};
use crate::calibration::{calibrate_k, KCalibration, KEntry, KTable, PUBLISHED_ALPHA_P};
use crate::error::{Error, Result};
use crate::gpv::{GpvResult, DEFAULT_DRAWS};
use crate::kappa_cover::NormalParams;
use crate::rng_dist::SampleSummary;
use crate::sim_harness::{
    boundary_sweep, rejection_grid, run_cells, CellSink, CsvSink, ExperimentResult, ExperimentSpec,
    HarnessSettings, TestDistribution, DESK_DRAWS, DESK_REPLICATES, FULL_DRAWS, FULL_REPLICATES,
};

pub const KTABLE_ENV: &str = "KAPPA_COVER_KTABLE";

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Column of a sample file, by header name or 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSel {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for ColumnSel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.parse::<usize>() {
            Ok(0) => Err("column indices are 1-based".into()),
            Ok(i) => Ok(ColumnSel::Index(i)),
            Err(_) if s.is_empty() => Err("empty column name".into()),
            Err(_) => Ok(ColumnSel::Name(s.to_string())),
        }
    }
}

impl std::fmt::Display for ColumnSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnSel::Name(n) => f.write_str(n),
            ColumnSel::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub path: PathBuf,
    pub column: ColumnSel,
    pub values: Vec<f64>,
}

/// Reads one numeric column of a comma-separated file.
///
/// With a named column the first non-blank row must be a header. With an
/// index the header is optional: a first row whose selected cell is not a
/// number is taken as the header. Blank lines are skipped; row numbers in
/// errors are 1-based file lines.
pub fn parse_sample_csv(path: &Path, column: &ColumnSel) -> Result<SampleFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;

    let mut idx: Option<usize> = match column {
        ColumnSel::Index(i) => Some(i - 1),
        ColumnSel::Name(_) => None,
    };
    let mut values = Vec::new();
    let mut seen_first = false;
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let first = !seen_first;
        seen_first = true;
        if first {
            match column {
                ColumnSel::Name(name) => {
                    let pos = rec.iter().position(|c| c.trim() == name);
                    match pos {
                        Some(p) => idx = Some(p),
                        None => {
                            return Err(Error::MissingColumn {
                                path: path.to_path_buf(),
                                column: name.clone(),
                                available: rec
                                    .iter()
                                    .map(|c| c.trim())
                                    .collect::<Vec<_>>()
                                    .join(", "),
                            })
                        }
                    }
                    continue;
                }
                ColumnSel::Index(i) => {
                    let cell = rec.get(i - 1).map(str::trim);
                    match cell {
                        Some(c) if c.parse::<f64>().is_err() && !looks_numeric(c) => continue,
                        None => {
                            return Err(Error::MissingColumn {
                                path: path.to_path_buf(),
                                column: column.to_string(),
                                available: format!("{} column(s)", rec.len()),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        let i = idx.expect("column resolved on first row");
        let cell = rec.get(i).map(str::trim).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("missing column {column}"),
        })?;
        values.push(parse_cell(cell).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        })?);
    }
    if values.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!(
                "column {column} has {} value(s), at least 2 required",
                values.len()
            ),
        });
    }
    Ok(SampleFile {
        path: path.to_path_buf(),
        column: column.clone(),
        values,
    })
}

fn looks_numeric(cell: &str) -> bool {
    // "1,5" style cells in a header position are data with a decimal comma
    cell.contains(',') && cell.replacen(',', ".", 1).parse::<f64>().is_ok()
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("empty cell".into());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("non-finite value `{v}`")),
        Err(_) if looks_numeric(cell) => Err(format!(
            "`{cell}` uses a decimal comma; use a decimal point"
        )),
        Err(_) => Err(format!("`{cell}` is not a number")),
    }
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData { got: 0, need: 1 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!(
            "quantile level must lie in [0, 1], got {q}"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub file: PathBuf,
    pub column: ColumnSel,
    pub summary: SampleSummary,
    /// Empirical `κ` and `1 - κ` quantiles; informational only.
    pub quantile_lower: f64,
    pub quantile_upper: f64,
}

/// Where the adjustment constant came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum KProvenance {
    Flag,
    Table {
        path: Option<PathBuf>,
        entry: KEntry,
    },
    AutoCalibrated {
        entry: KEntry,
        calibration: KCalibration,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub reference: SampleReport,
    pub test: SampleReport,
    pub config: CTestConfig,
    pub k: KProvenance,
    pub gpv: GpvResult,
    pub p_c: f64,
    pub p_abs: f64,
    pub pbar_min: f64,
    pub branch: Branch,
    pub reject: bool,
    pub verdict: String,
}

pub const VERDICT_ACCEPT: &str = "cannot reject κ-cover";
pub const VERDICT_REJECT: &str = "reject κ-cover";

impl Report {
    pub fn new(
        reference: &SampleFile,
        test: &SampleFile,
        config: CTestConfig,
        k: KProvenance,
        res: &CTestResult,
    ) -> Result<Self> {
        let kappa = config.kappa.get();
        let side = |f: &SampleFile, summary: SampleSummary| -> Result<SampleReport> {
            Ok(SampleReport {
                file: f.path.clone(),
                column: f.column.clone(),
                summary,
                quantile_lower: empirical_quantile(&f.values, kappa)?,
                quantile_upper: empirical_quantile(&f.values, 1.0 - kappa)?,
            })
        };
        Ok(Report {
            reference: side(reference, res.summary_r)?,
            test: side(test, res.summary_t)?,
            config,
            k,
            gpv: res.gpv,
            p_c: res.p_c,
            p_abs: res.p_abs,
            pbar_min: res.pbar_min,
            branch: res.branch,
            reject: res.reject,
            verdict: verdict(res.p_c, config.alpha.get()).to_string(),
        })
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.p_c, self.config.alpha.get())
    }

    pub fn k_value(&self) -> f64 {
        self.config.k_adjust
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kappa = self.config.kappa.get();
        let _ = writeln!(s, "C-test for kappa-cover (kappa = {kappa})");
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>12} {:>12} {:>14} {:>14}",
            "sample", "n", "mean", "sd", "q(kappa)", "q(1-kappa)"
        );
        for (name, r) in [("reference", &self.reference), ("test", &self.test)] {
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>12.6} {:>12.6} {:>14.6} {:>14.6}   {}",
                name,
                r.summary.n,
                r.summary.mean,
                r.summary.sd,
                r.quantile_lower,
                r.quantile_upper,
                r.file.display()
            );
        }
        let k_src = match &self.k {
            KProvenance::Flag => "--k".to_string(),
            KProvenance::Table { path: Some(p), .. } => format!("k-table {}", p.display()),
            KProvenance::Table { path: None, .. } => "built-in k-table".to_string(),
            KProvenance::AutoCalibrated { entry, .. } => format!(
                "calibrated (M={}, N={}, seed={})",
                entry.m_replicates,
                entry.n_draws,
                entry.seed.unwrap_or_default()
            ),
        };
        let _ = writeln!(
            s,
            "alpha = {}  alpha_p = {}  K = {} ({k_src})  draws = {}  seed = {}",
            self.config.alpha.get(),
            self.config.alpha_p.get(),
            self.config.k_adjust,
            self.config.n_draws,
            self.config.seed
        );
        let g = &self.gpv;
        let _ = writeln!(
            s,
            "p_u = {:.4}  p_l = {:.4}  p_|3| = {:.4}  pbar_u = {:.4}  pbar_l = {:.4}",
            g.p_u, g.p_l, g.p_abs, g.pbar_u, g.pbar_l
        );
        let branch = match self.branch {
            Branch::OneSided => "one-sided (pretest significant)",
            Branch::Corrected => "corrected (K * p_|3|)",
        };
        let _ = writeln!(s, "branch: {branch}");
        let _ = writeln!(s, "p_C = {:.4}", self.p_c);
        let _ = writeln!(s, "verdict: {}", self.verdict);
        s
    }
}

pub fn verdict(p_c: f64, alpha: f64) -> &'static str {
    if p_c < alpha {
        VERDICT_REJECT
    } else {
        VERDICT_ACCEPT
    }
}

pub fn exit_code(p_c: f64, alpha: f64) -> i32 {
    if p_c < alpha {
        EXIT_REJECT
    } else {
        EXIT_ACCEPT
    }
}

/// The built-in table overlaid with the entries of `path`, if given.
pub fn effective_table(path: Option<&Path>) -> Result<KTable> {
    let mut table = KTable::published();
    if let Some(p) = path {
        for e in KTable::load(p)?.entries {
            table.upsert(e)?;
        }
    }
    Ok(table)
}

fn table_path(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| {
        std::env::var_os(KTABLE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "kappa-cover",
    version,
    about = "Range-based comparison of two normal quality attributes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the C-test on two sample files.
    Test(TestArgs),
    /// Calibrate the adjustment constant K by simulation.
    Calibrate(CalibrateArgs),
    /// Simulate rejection rates (CSV output).
    Simulate(SimulateArgs),
    /// List the effective k-table.
    Ktable(KtableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Reference sample file.
    #[arg(long = "reference", short = 'r')]
    pub reference: PathBuf,
    /// Test sample file.
    #[arg(long = "test", short = 't')]
    pub test: PathBuf,
    /// Column name or 1-based index, for both files.
    #[arg(long, default_value = "1")]
    pub column: ColumnSel,
    #[arg(long)]
    pub reference_column: Option<ColumnSel>,
    #[arg(long)]
    pub test_column: Option<ColumnSel>,
    #[arg(long)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA_P)]
    pub alpha_p: f64,
    /// Adjustment constant; overrides any k-table.
    #[arg(long)]
    pub k: Option<f64>,
    /// K-table JSON overlaid on the built-in constants.
    #[arg(long, env = KTABLE_ENV)]
    pub ktable: Option<PathBuf>,
    /// Calibrate K when no table entry exists (slow).
    #[arg(long)]
    pub auto_calibrate: bool,
    /// Replicates for --auto-calibrate.
    #[arg(long, default_value_t = FULL_REPLICATES)]
    pub replicates: usize,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub kappa: f64,
    /// Reference sample size.
    #[arg(long = "n-r")]
    pub n_r: usize,
    /// Test sample size; defaults to the reference size.
    #[arg(long = "n-t")]
    pub n_t: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA_P)]
    pub alpha_p: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = FULL_REPLICATES)]
    pub replicates: usize,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// K-table to update (created if missing).
    #[arg(long, env = KTABLE_ENV)]
    pub ktable: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub kind: SimKind,
    #[arg(long, global = true, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    /// Use 10^5 replicates with 10^4 draws unless overridden.
    #[arg(long, global = true)]
    pub full_scale: bool,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = KTABLE_ENV)]
    pub ktable: Option<PathBuf>,
    /// CSV destination; rows already present are skipped.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimKind {
    /// Rejection rates on the null boundary at given mu_T.
    Size {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
        mu: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.00135])]
        kappa: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 25, 50, 100])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = PUBLISHED_ALPHA_P)]
        alpha_p: Vec<f64>,
    },
    /// Rejection rates at fixed alternatives `MU:SIGMA`.
    Power {
        #[arg(long, value_delimiter = ',', default_values = ["0:1.2", "0.5:1"])]
        alternative: Vec<Alternative>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.00135])]
        kappa: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 25, 50, 100])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = PUBLISHED_ALPHA_P)]
        alpha_p: Vec<f64>,
    },
    /// Sweep along the upper leg of the null boundary.
    Boundary {
        #[arg(long)]
        kappa: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha_p: f64,
        #[arg(long, default_value_t = 0.05)]
        mu_step: f64,
    },
    /// Rejection probability over a (mu_T, sigma_T) grid.
    Grid {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha_p: f64,
        #[arg(long, value_parser = parse_range, default_value = "-2:2")]
        mu_range: (f64, f64),
        #[arg(long, value_parser = parse_range, default_value = "0.05:1.5")]
        sigma_range: (f64, f64),
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
}

/// A fixed test distribution written `MU:SIGMA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alternative(pub NormalParams);

impl std::str::FromStr for Alternative {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (mu, sigma) = parse_range(s)?;
        NormalParams::new(mu, sigma)
            .map(Alternative)
            .map_err(|e| e.to_string())
    }
}

impl std::fmt::Display for Alternative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.0.mu, self.0.sigma)
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `A:B`, got `{s}`"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Args)]
pub struct KtableArgs {
    #[arg(long, env = KTABLE_ENV)]
    pub ktable: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_ACCEPT
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Test(a) => {
            let report = cmd_test(&a)?;
            let text = match a.format {
                Format::Text => report.to_text(),
                Format::Json => serde_json::to_string_pretty(&report)? + "\n",
            };
            emit(a.output.as_deref(), &text)?;
            Ok(report.exit_code())
        }
        Command::Calibrate(a) => {
            let entry = cmd_calibrate(&a)?;
            let text = match a.format {
                Format::Text => format!(
                    "K = {} (kappa={} n_R={} n_T={} alpha_p={} alpha={} M={} N={} seed={}; se of achieved rate {:.5})\n",
                    entry.k,
                    entry.kappa,
                    entry.n_r,
                    entry.n_t,
                    entry.alpha_p,
                    entry.alpha,
                    entry.m_replicates,
                    entry.n_draws,
                    entry.seed.unwrap_or_default(),
                    entry.mc_std_error.unwrap_or(f64::NAN)
                ),
                Format::Json => serde_json::to_string_pretty(&entry)? + "\n",
            };
            emit(None, &text)?;
            Ok(EXIT_ACCEPT)
        }
        Command::Simulate(a) => {
            cmd_simulate(&a)?;
            Ok(EXIT_ACCEPT)
        }
        Command::Ktable(a) => {
            let table = effective_table(table_path(&a.ktable).as_deref())?;
            let text = match a.format {
                Format::Json => table.to_json()? + "\n",
                Format::Text => {
                    let mut s = String::from("kappa,n_R,n_T,alpha_p,alpha,K,M,N,seed\n");
                    for e in &table.entries {
                        let seed = e.seed.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{},{}",
                            e.kappa,
                            e.n_r,
                            e.n_t,
                            e.alpha_p,
                            e.alpha,
                            e.k,
                            e.m_replicates,
                            e.n_draws,
                            seed
                        );
                    }
                    s
                }
            };
            emit(None, &text)?;
            Ok(EXIT_ACCEPT)
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("writing stdout", e)),
    }
}

/// Resolves K by precedence: explicit value, k-table, then calibration.
pub fn resolve_k(a: &TestArgs, n_r: usize, n_t: usize) -> Result<(f64, KProvenance)> {
    if let Some(k) = a.k {
        return Ok((k, KProvenance::Flag));
    }
    let path = table_path(&a.ktable);
    let table = effective_table(path.as_deref())?;
    match table.lookup(a.kappa, n_r, n_t, a.alpha_p, a.alpha) {
        Ok(entry) => {
            // entries without a seed come from the built-in table
            let from_file = path.filter(|_| entry.seed.is_some());
            Ok((
                entry.k,
                KProvenance::Table {
                    path: from_file,
                    entry: *entry,
                },
            ))
        }
        Err(Error::NotCalibrated { .. }) if a.auto_calibrate => {
            eprintln!(
                "warning: calibrating K for kappa={} n_R={n_r} n_T={n_t} alpha_p={} with {} replicates x {} draws; this can take minutes",
                a.kappa, a.alpha_p, a.replicates, a.draws
            );
            let cal = calibrate_k(
                a.kappa,
                n_r,
                n_t,
                a.alpha_p,
                a.alpha,
                a.replicates,
                a.draws,
                a.seed,
            )?;
            let entry = entry_from(
                &cal,
                a.kappa,
                n_r,
                n_t,
                a.alpha_p,
                a.alpha,
                a.replicates,
                a.draws,
                a.seed,
            );
            Ok((
                cal.k,
                KProvenance::AutoCalibrated {
                    entry,
                    calibration: cal,
                },
            ))
        }
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn entry_from(
    cal: &KCalibration,
    kappa: f64,
    n_r: usize,
    n_t: usize,
    alpha_p: f64,
    alpha: f64,
    m: usize,
    n: usize,
    seed: u64,
) -> KEntry {
    KEntry {
        kappa,
        n_r,
        n_t,
        alpha_p,
        alpha,
        m_replicates: m,
        n_draws: n,
        k: cal.k,
        mc_std_error: Some(cal.std_error),
        seed: Some(seed),
    }
}

pub fn cmd_test(a: &TestArgs) -> Result<Report> {
    let rc = a.reference_column.as_ref().unwrap_or(&a.column);
    let tc = a.test_column.as_ref().unwrap_or(&a.column);
    let reference = parse_sample_csv(&a.reference, rc)?;
    let test = parse_sample_csv(&a.test, tc)?;
    // validate the probabilities before any table lookup or calibration
    CTestConfig::new(a.kappa, a.alpha, a.alpha_p, 1.0)?;
    let (k, provenance) = resolve_k(a, reference.values.len(), test.values.len())?;
    let cfg = CTestConfig::new(a.kappa, a.alpha, a.alpha_p, k)?
        .with_draws(a.draws)
        .with_seed(a.seed);
    let res = run_c_test(&reference.values, &test.values, &cfg)?;
    Report::new(&reference, &test, cfg, provenance, &res)
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<KEntry> {
    let n_t = a.n_t.unwrap_or(a.n_r);
    let cal = calibrate_k(
        a.kappa,
        a.n_r,
        n_t,
        a.alpha_p,
        a.alpha,
        a.replicates,
        a.draws,
        a.seed,
    )?;
    let entry = entry_from(
        &cal,
        a.kappa,
        a.n_r,
        n_t,
        a.alpha_p,
        a.alpha,
        a.replicates,
        a.draws,
        a.seed,
    );
    if let Some(path) = table_path(&a.ktable) {
        let mut table = if path.exists() {
            KTable::load(&path)?
        } else {
            KTable::new()
        };
        table.upsert(entry)?;
        table.save(&path)?;
    }
    Ok(entry)
}

struct StdoutSink {
    writer: csv::Writer<std::io::Stdout>,
}

impl CellSink for StdoutSink {
    fn contains(&self, _: &crate::sim_harness::CellKey) -> bool {
        false
    }
    fn emit(&mut self, result: &ExperimentResult) -> Result<()> {
        self.writer.serialize(result)?;
        self.writer
            .flush()
            .map_err(|e| Error::io("writing stdout", e))
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<ExperimentResult>> {
    let (m_def, n_def) = if a.full_scale {
        (FULL_REPLICATES, FULL_DRAWS)
    } else {
        (DESK_REPLICATES, DESK_DRAWS)
    };
    let settings = HarnessSettings {
        alpha: a.alpha,
        m_replicates: a.replicates.unwrap_or(m_def),
        n_draws: a.draws.unwrap_or(n_def),
        seed: a.seed,
    };
    let table = effective_table(table_path(&a.ktable).as_deref())?;
    let mut sink: Box<dyn CellSink> = match &a.output {
        Some(p) => Box::new(CsvSink::open(p)?),
        None => Box::new(StdoutSink {
            writer: csv::Writer::from_writer(std::io::stdout()),
        }),
    };
    let cell = |d_t, n, kappa, alpha_p| ExperimentSpec {
        d_r: NormalParams::standard(),
        d_t,
        n_r: n,
        n_t: n,
        kappa,
        alpha: settings.alpha,
        alpha_p,
        m_replicates: settings.m_replicates,
        n_draws: settings.n_draws,
        seed: settings.seed,
    };
    match &a.kind {
        SimKind::Size {
            mu,
            kappa,
            n,
            alpha_p,
        } => {
            let mut specs = Vec::new();
            for &m in mu {
                for &k in kappa {
                    for &nn in n {
                        for &ap in alpha_p {
                            specs.push(cell(TestDistribution::Boundary { mu_t: m }, nn, k, ap));
                        }
                    }
                }
            }
            run_cells(&specs, &table, sink.as_mut())
        }
        SimKind::Power {
            alternative,
            kappa,
            n,
            alpha_p,
        } => {
            let mut specs = Vec::new();
            for alt in alternative {
                for &k in kappa {
                    for &nn in n {
                        for &ap in alpha_p {
                            specs.push(cell(TestDistribution::Fixed(alt.0), nn, k, ap));
                        }
                    }
                }
            }
            run_cells(&specs, &table, sink.as_mut())
        }
        SimKind::Boundary {
            kappa,
            n,
            alpha_p,
            mu_step,
        } => boundary_sweep(
            *kappa,
            n,
            *alpha_p,
            *mu_step,
            &settings,
            &table,
            sink.as_mut(),
        ),
        SimKind::Grid {
            kappa,
            n,
            alpha_p,
            mu_range,
            sigma_range,
            step,
        } => Ok(rejection_grid(
            *kappa,
            *n,
            *alpha_p,
            *mu_range,
            *sigma_range,
            *step,
            &settings,
            &table,
            sink.as_mut(),
        )?
        .into_iter()
        .flatten()
        .collect()),
    }
}
