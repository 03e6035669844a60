//! Testing whether elicited beliefs can be rationalized as rational
//! expectations of realized outcomes, using only the two marginal
//! distributions.
//!
//! The central fact this crate builds on: a joint law with the observed
//! marginals under which beliefs equal the conditional mean of outcomes
//! exists if and only if the outcome distribution is a mean-preserving
//! spread of the belief distribution. That turns the null into one moment
//! equality and a continuum of moment inequalities
//! `E[(y - Y)^+ - (y - psi)^+] >= 0`, which is tested here with a
//! Cramér-von-Mises sup statistic and generalized-moment-selection
//! bootstrap critical values.
//!
//! The crate is organized as a library first; see the `examples/`
//! directory for one runnable program per capability, and the thin
//! `mpstest` binary for batch use.
//!
//! - [`sample`]: pooled two-sample data, CSV ingestion, winsorization.
//! - [`instruments`]: covariate standardization and hypercube instruments.
//! - [`moments`]: moment functions, sample means, regularized variances.
//! - [`oracle`]: exact discrete machinery — integrated cdf gaps,
//!   mean-preserving-spread checks, martingale couplings, population
//!   rejection thresholds.
//! - [`engine`]: the statistic, GMS bootstrap, critical values, p-values.
//! - [`variants`]: aggregate shocks, rounding bounds, propensity
//!   weighting, the regression lower bound, and classic benchmark tests.
//! - [`montecarlo`]: data-generating processes and power-curve harness.
//! - [`report`]: run manifests and machine-readable JSON reports.

pub mod engine;
pub mod error;
pub mod instruments;
pub mod moments;
pub mod montecarlo;
pub mod oracle;
pub mod report;
pub mod sample;
pub mod variants;

pub use engine::{run_test, TestConfig, TestReport};
pub use error::{Error, Result};
pub use oracle::DiscreteDist;
pub use sample::{ObservationRow, PooledSample};
