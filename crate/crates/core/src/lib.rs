//! Fast evaluation of kernel sums `F(q) = sum_i m_i . g(p_i, q)` over large
//! source point sets.
//!
//! Three interchangeable evaluators share one spatial tree:
//!
//! * [`estimators::brute_force`]: exact pairwise-summed oracle.
//! * [`estimators::barnes_hut`]: deterministic far-field truncation.
//! * [`estimators::path_sample_estimate`]: unbiased stochastic estimator that
//!   samples root-to-leaf paths, uses tree aggregates as control variates and
//!   truncates paths with Russian roulette driven by far-field ratios.
//!
//! The [`bench`] module reproduces error/efficiency sweeps over these
//! evaluators, and [`io`] covers point/mesh ingestion, query generation and
//! the CSV/PFM/PGM writers used by the `fastsum` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bench;
pub mod error;
pub mod estimators;
pub mod geom;
pub mod io;
pub mod kernels;
pub mod octree;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use estimators::{evaluate_field, EvalStats, FieldEvaluator, FieldResult};
pub use kernels::{KernelKind, KernelSpec};
pub use octree::{Octree, TreeNode};
pub use types::{
    normalize_to_unit_cube, EstimatorConfig, Method, Precision, QuerySet, RrMode, SourcePoint,
    SourceSet,
};
