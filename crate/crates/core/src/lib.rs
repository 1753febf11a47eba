//! Data reduction for density regression with conditional support points.
//!
//! A large `(covariate, response)` dataset is compacted into a few hundred or
//! thousand representative pairs by partitioning the covariate space and
//! placing energy-distance-optimal points on the response line inside each
//! cell. A penalized-likelihood conditional density estimator is then fitted
//! to the reduced set and scored by CRPS.
//!
//! Module map:
//! - [`metrics`]: energy distance, L2 discrepancy, CRPS, symmetrized KL.
//! - [`support_points`]: majorize–minimize solver for support points.
//! - [`partition`]: equal-width bins and Voronoi cells (k-means or support-point centers).
//! - [`reduction`]: conditional support points, the marginal variant and baselines.
//! - [`density`]: tensor-spline penalized (pseudo-)likelihood conditional density.
//! - [`simgen`]: simulation cases with exact conditional truths.
//! - [`cli`]: the `reduce` / `fit` / `eval` / `simulate` commands.

pub mod bspline;
pub mod cli;
pub mod data;
pub mod density;
pub mod error;
pub mod metrics;
pub mod points;
pub mod quadrature;
pub mod partition;
pub mod reduction;
pub mod simgen;
pub mod support_points;

pub use error::{Error, Result};
pub use points::{Interval, PointSet};
