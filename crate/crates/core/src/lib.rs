//! Independence-structure density estimation on the unit cube.
//!
//! Data in `[0, 1]^d` are split into a fitting half and a hold-out half.
//! Every feature subset of size at most `k` gets a boundary-corrected kernel
//! density estimate, scored by its hold-out log-likelihood, and the partition
//! of the features maximizing the summed score is found exactly.

pub mod bounds;
pub mod combinatorics;
pub mod data;
pub mod divergences;
pub mod error;
pub mod gaussian_oracle;
pub mod io;
pub mod isde;
pub mod kernel;
pub mod mirror_kde;
pub mod partition_solver;
pub mod quadrature;
pub mod scoring;

pub use combinatorics::{FeaturePartition, FeatureSubset};
pub use data::{AffineMap, DataMatrix};
pub use error::{IsdeError, Result};
pub use kernel::{Kernel, KernelKind};
pub use mirror_kde::{BandwidthRule, MirrorKdeModel};
pub use partition_solver::{solve_branch_and_bound, solve_dp, Solution};
pub use scoring::{build_score_table, score_subset, ScoreTable};
pub use isde::{evaluate_joint, run, IsdeConfig, IsdeResult};
