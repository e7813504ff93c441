//! PolyModel hedge-fund analytics.
//!
//! The crate fits one degree-4 Hermite polynomial per (fund, factor) pair,
//! scores every pair's relevance with target shuffling, derives the
//! stress-VaR / long-term-alpha feature stack, trains a boosted-tree trend
//! classifier, and backtests monthly-rebalanced fund portfolios.
//!
//! Modules follow the pipeline order:
//!
//! - [`panel`]: monthly fund and factor panels, CSV ingestion, alignment, imputation
//! - [`synth`]: seeded synthetic panels with planted exposures
//! - [`hermite`]: Hermite basis and ridge / OLS polynomial fits
//! - [`shuffle`]: target-shuffling p-values and relevant-factor selection
//! - [`risk`]: quantile sets with Pareto tails, SVaR, LTA, LTR, LTS, MRaR, Sharpe
//! - [`trend`]: gradient-boosted trend classifier on a moving window
//! - [`backtest`]: fund filters, weighting, the monthly backtest loop and metrics
//! - [`pipeline`]: end-to-end orchestration used by the CLI and the Python module

// `!(a > b)` is used on purpose so NaN takes the rejecting branch; index loops read
// closer to the linear algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backtest;
pub mod error;
pub mod hermite;
pub mod panel;
pub mod pipeline;
pub mod risk;
pub mod rng;
pub mod shuffle;
pub mod synth;
pub mod trend;

pub use error::{Error, Result};
pub use hermite::{hermite, ols_fit, predict, ridge_fit, HermiteCoeffs, PolyFit};
pub use panel::{
    align, impute_feature, load_panel, AlignedPair, FactorRecord, FeatureName, FundRecord,
    MonthIndex, MonthlyPanel, ReturnSeries,
};
pub use shuffle::{pvalue_score, rolling_scores, select_factors, FactorSelection, PValueScore, ShuffleConfig};
pub use synth::{generate_synthetic, SyntheticSpec};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
