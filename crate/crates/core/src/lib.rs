//! Range-based comparison of two normal quality attributes.
//!
//! A test distribution `N(μ_T, σ_T²)` κ-covers a reference `N(μ_R, σ_R²)`
//! when its central `1 - 2κ` range lies inside the reference's. The C-test
//! checks this hypothesis from two samples using generalized p-values and a
//! calibrated adjustment constant `K`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod c_test;
pub mod calibration;
pub mod cli_io;
pub mod error;
pub mod gpv;
pub mod kappa_cover;
pub mod rng_dist;
pub mod sim_harness;

pub use c_test::{run_c_test, Branch, CTestConfig, CTestResult, DEFAULT_ALPHA_P};
pub use calibration::{calibrate_k, KCalibration, KEntry, KTable};
pub use error::{Error, Result};
pub use gpv::{estimate_gpv, GpvResult};
pub use kappa_cover::{boundary_sigma, is_kappa_cover, max_kappa, NormalParams, ThetaVerdict};
pub use rng_dist::{summarize, Probability, RngStream, SampleSummary};
pub use sim_harness::{run_cell, ExperimentResult, ExperimentSpec, TestDistribution};
