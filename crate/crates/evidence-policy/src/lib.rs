//! Learning treatment-assignment policies that maximize the probability of
//! passing a one-sided significance test on held-out trial data.
//!
//! The crate takes randomized-trial data `(X, W, Y)`, transforms outcomes into
//! centered inverse-propensity pseudo-outcomes, and searches for assignment
//! policies that maximize the in-sample t-statistic of policy value — the
//! training surrogate for out-of-sample test power. Three learners are
//! provided:
//!
//! * [`ratio_opt`] — exact subset selection over finite cells via λ-bisection
//!   over submodular minimizations, with a certified approximation guarantee;
//! * [`tree_policy`] — a greedy policy tree whose split criterion is the
//!   global t-statistic of the full assignment, plus a relaxed variant with
//!   probabilistic leaf weights;
//! * [`model_based`] — level-split regression trees for the conditional mean
//!   and second moment of the pseudo-outcome, whose intersected leaves feed
//!   the cell-subset optimizer.
//!
//! [`benchmarks`] holds the competitor policies (treat-all, cost-sensitive
//! classifier trees, R-learner CATE thresholding), [`oracle`] the closed-form
//! power criteria used as test oracles, and [`experiments`] the replication
//! harness behind the CLI.

pub mod benchmarks;
mod cart;
pub mod centering;
pub mod dataset;
mod error;
pub mod experiments;
mod matrix;
pub mod model_based;
pub mod oracle;
pub mod policy;
pub mod ratio_opt;
pub mod scoring;
pub mod stats;
pub mod tree_policy;

pub use error::Error;
pub use matrix::Matrix;
pub use policy::{ConstantPolicy, Policy};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
