//! Conservative fusion of two Gaussian estimates whose cross-correlation is
//! unknown apart from a known pattern of zeros.
//!
//! * [`fusion`]: covariance intersection (CI), non-monolithic CI over a
//!   partition of independent state blocks, and the exact BLUE oracle.
//! * [`sampler`] and [`sdp`]: draw cross-covariances from the uncertainty
//!   set and solve the sampled robust fusion problem as an SDP.
//! * [`eval`]: NEES/chi-square consistency, RMSE and the nmCI-vs-SDP sweep.

pub mod error;
pub mod estimate;
pub mod eval;
pub mod fusion;
pub mod matrix;
pub mod result;
pub mod rng;
pub mod sampler;
pub mod sdp;
pub mod special;
pub mod structure;

pub use error::{FusionError, Result};
pub use estimate::GaussianEstimate;
pub use fusion::{ci_fuse, exact_fuse, nmci_fuse, optimize_ci_omega, realized_cov, BlockMode, OmegaVector};
pub use matrix::{cov_to_corr, corr_to_cov, is_conservative};
pub use result::{Diagnostics, FusionResult, MethodTag};
pub use sampler::{sample_cross, sample_set, UncertaintySample};
pub use sdp::{build_problem, robust_fuse, solve, SampledFusionProblem, SdpSolution, SolverOptions, SolverStatus};
pub use structure::{BlockPartition, CrossSparsityPattern, JointCovariance};

/// Known-zero pattern of the cross-covariance induced by a partition.
pub fn partition_to_sparsity(partition: &BlockPartition) -> CrossSparsityPattern {
    CrossSparsityPattern::from_partition(partition)
}
