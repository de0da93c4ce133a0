//! Caption subset-matching labeler, dataset auditor and distribution-shift
//! robustness evaluator.
//!
//! * [`labeling`] turns caption manifests into integer labels by matching
//!   normalized token n-grams against a per-class term dictionary.
//! * [`audit`] measures label accuracy, coverage and utilization, counts
//!   class frequencies and plans class rebalancing.
//! * [`labelset`] subsets, partitions and intersects class universes and
//!   remaps predictions onto reduced label sets.
//! * [`eval`] scores prediction logs and computes average robustness and the
//!   effective robustness ratio.
//! * [`aggregate`] bins a model zoo by metadata and averages the top-k models
//!   per bin.
//! * [`pipeline`] composes these into the batch commands of the `capmatch`
//!   binary.

pub mod aggregate;
pub mod audit;
pub mod error;
pub mod eval;
pub mod io;
pub mod labeling;
pub mod labelset;
pub mod pipeline;

pub use error::{Error, Result};
