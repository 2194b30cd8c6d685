//! Differentially private confidence intervals for the median.
//!
//! Four mechanisms are provided: the widened exponential mechanism
//! ([`exp_mech`]), a noisy CDF tree with threshold post-processing
//! ([`cdf_tree`]), adaptive noisy binary search ([`binsearch`]) and a hybrid
//! of the last two ([`composite`]). [`mechanism::Mechanism`] runs any of them
//! with a [`Budget`] and returns the interval, side information and a spend
//! ledger. [`eval`] holds the Monte-Carlo harness.

pub mod binsearch;
pub mod cdf_tree;
pub mod composite;
pub mod error;
pub mod eval;
pub mod exp_mech;
pub mod mechanism;
pub mod order_stats;
pub mod privacy;
pub mod special;

pub use error::{Error, ErrorClass, Result};
pub use mechanism::{Guarantee, Hyperparams, Mechanism, MechanismKind, Release, SideInfo};
pub use order_stats::{ContinuityConfig, Interval, RangeSpec, RankTargets, Sample};
pub use privacy::{Budget, BudgetKind, Ledger, RngStream};
