//! Pairwise fusion over the communication graph.

use nmci::{ci_fuse, nmci_fuse, robust_fuse, BlockMode, CrossSparsityPattern, FusionResult, GaussianEstimate};
use rand::RngCore;

use crate::config::{Exchange, FusionConfig, Method};
use crate::error::{Result, SimError};
use crate::filter::AgentBelief;

/// Record of one edge fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFusion {
    /// Position of the edge in the schedule.
    pub edge: usize,
    /// Zero-based agent indices.
    pub a: usize,
    pub b: usize,
    pub omega: Option<Vec<f64>>,
    /// Largest cross-block entry removed by lenient nmCI.
    pub projected: Option<f64>,
}

/// Fuse two beliefs with `method`. The SDP method draws its sampler seed
/// from `rng`.
pub fn fuse_pair(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    partition: &nmci::BlockPartition,
    method: Method,
    settings: &FusionConfig,
    rng: &mut dyn RngCore,
) -> nmci::Result<FusionResult> {
    match method {
        Method::Ci => ci_fuse(a, b, None),
        Method::Nmci => nmci_fuse(a, b, partition, BlockMode::Lenient),
        Method::Sdp => {
            let pattern = CrossSparsityPattern::from_partition(partition);
            robust_fuse(a, b, &pattern, settings.sdp_samples, rng.next_u64(), settings.sdp_tol)
        }
        Method::None | Method::Centralized => Err(nmci::FusionError::InvalidArgument(format!(
            "method {method} does not fuse beliefs"
        ))),
    }
}

/// One pass over `edges` in order. With symmetric exchange both endpoints
/// adopt the fused belief, otherwise only the second endpoint does.
/// `Method::None` leaves the beliefs untouched.
pub fn fusion_round(
    beliefs: &mut [AgentBelief],
    edges: &[(usize, usize)],
    method: Method,
    settings: &FusionConfig,
    step: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<EdgeFusion>> {
    if method == Method::None {
        return Ok(Vec::new());
    }
    if method == Method::Centralized {
        return Err(SimError::Config("the centralized baseline has no fusion round".into()));
    }
    let mut log = Vec::with_capacity(edges.len());
    for (edge, &(a, b)) in edges.iter().enumerate() {
        let fused = fuse_pair(&beliefs[a].estimate, &beliefs[b].estimate, &beliefs[a].partition, method, settings, rng)
            .map_err(|source| SimError::Fusion { step, edge: edge + 1, a: a + 1, b: b + 1, source })?;
        let estimate = fused.to_estimate();
        if settings.exchange == Exchange::Symmetric {
            beliefs[a].estimate = estimate.clone();
        }
        beliefs[b].estimate = estimate;
        log.push(EdgeFusion { edge, a, b, omega: fused.omega, projected: fused.diagnostics.projected_cross_block });
    }
    Ok(log)
}
