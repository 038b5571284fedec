use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {got} observation(s), at least {need} required")]
    InsufficientData { got: usize, need: usize },

    /// A sample with zero (or non-finite) standard deviation reached a statistic.
    #[error("degenerate sample `{sample}`: standard deviation is {sd}")]
    DegenerateSample { sample: String, sd: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "no adjustment constant K for kappa={kappa}, n_R={n_r}, n_T={n_t}, alpha_p={alpha_p}, \
         alpha={alpha}; run `kappa-cover calibrate` for this key or pass --k"
    )]
    NotCalibrated {
        kappa: f64,
        n_r: usize,
        n_t: usize,
        alpha_p: f64,
        alpha: f64,
    },

    #[error(
        "calibration infeasible: the one-sided branch alone rejects at rate {one_sided_rate:.5} > alpha={alpha}"
    )]
    Infeasible { one_sided_rate: f64, alpha: f64 },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: column `{column}` not found (available: {available})")]
    MissingColumn {
        path: PathBuf,
        column: String,
        available: String,
    },

    #[error("unsupported k-table schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
