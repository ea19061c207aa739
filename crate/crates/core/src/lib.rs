//! Matching-frontier toolkit for observational panel data.
//!
//! The crate turns a household-year panel into treated/control matching
//! samples, prunes them along an imbalance/sample-size frontier under either
//! the multivariate-histogram L1 metric or the average Mahalanobis imbalance
//! (AMI), and estimates the average treatment effect on the treated at any
//! point of that frontier. A descriptive layer computes diffusion levels,
//! adopter categories, fractionalization indices and group comparisons.
//!
//! Modules, bottom-up:
//!
//! * [`data`]: schema, CSV ingestion and validation.
//! * [`sample`]: year-wise treated/control assignment (full and partial pooling).
//! * [`metrics`]: coarsening, L1, covariance, Mahalanobis distance and AMI.
//! * [`frontier`]: greedy L1 and AMI frontiers plus an exhaustive oracle.
//! * [`estimation`]: ATT, Welch tests, balance reports, frontier point selection.
//! * [`descriptives`]: diffusion curves, adopter categories, fractionalization.
//! * [`simulate`]: seeded synthetic panels with known treatment effect.

pub mod data;
pub mod descriptives;
pub mod error;
pub mod estimation;
pub mod frontier;
pub mod metrics;
pub mod sample;
pub mod simulate;

pub use data::{
    parse_dataset, validate, CovariateKind, CovariateSchema, CovariateSpec, CovariateValue,
    Observation, PanelDataset, ValidationReport,
};
pub use descriptives::{
    adopter_category, diffusion_level, diffusion_series, fractionalization, AdopterCategory,
    CategoryThresholds,
};
pub use error::{Error, Result};
pub use estimation::{
    att_along_frontier, balance_report, estimate_att, mean_difference_test,
    select_balanced_subset, AttEstimate, BalanceReport, Estimand, SeMethod,
};
pub use frontier::{
    brute_force_frontier, build_frontier_ami, build_frontier_l1, AmiOptions, BruteMetric,
    Frontier, FrontierPoint, MetricKind,
};
pub use metrics::{
    ami, coarsen, estimate_covariance, l1_imbalance, mahalanobis, BinnedSample, BinningRule,
    BinningSpec, CovarianceModel,
};
pub use sample::{
    build_full_pooling, build_partial_pooling, subset_by, MatchingSample, PoolingConfig,
    Provenance, SubsetFilter, Unit,
};
pub use simulate::{simulate, simulated_schema, GeneratorConfig, SimulatedPanel, SIM_COVARIATES};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
