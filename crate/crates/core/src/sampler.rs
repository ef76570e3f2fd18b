//! Rejection sampling of cross-covariances from the uncertainty set
//! `U = { P_ab : [[P_a, P_ab], [P_abᵀ, P_b]] ≻ 0, P_ab[i,j] = 0 for known zeros }`.
//!
//! Proposals are correlation cross-blocks with each free entry uniform on
//! `[−1, 1]`; a proposal is accepted when the joint correlation matrix is
//! positive definite with margin [`ACCEPT_MARGIN`].

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};

use crate::error::{FusionError, Result};
use crate::matrix::{assemble_joint, check_spd, cov_to_corr, min_eigenvalue};
use crate::rng::{seeded, StreamRng};
use crate::structure::CrossSparsityPattern;

/// Minimum eigenvalue required of the joint correlation matrix.
pub const ACCEPT_MARGIN: f64 = 1e-9;

/// Proposals allowed per accepted sample.
pub const RETRY_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySample {
    pub p_ab: DMatrix<f64>,
    /// Proposals consumed, including the accepted one.
    pub attempts: u64,
}

/// Stateful sampler; successive draws continue one deterministic stream,
/// so the first `n` draws of a longer run equal a run of length `n`.
pub struct CrossSampler {
    corr_a: DMatrix<f64>,
    corr_b: DMatrix<f64>,
    scales_a: DVector<f64>,
    scales_b: DVector<f64>,
    free: Vec<(usize, usize)>,
    rng: StreamRng,
    budget: u64,
}

impl CrossSampler {
    pub fn new(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, pattern: &CrossSparsityPattern, seed: u64) -> Result<Self> {
        check_spd(p_a, "P_a")?;
        check_spd(p_b, "P_b")?;
        if pattern.dim_a() != p_a.nrows() || pattern.dim_b() != p_b.nrows() {
            return Err(FusionError::DimensionMismatch(format!(
                "pattern is {}x{}, marginals are {} and {}",
                pattern.dim_a(),
                pattern.dim_b(),
                p_a.nrows(),
                p_b.nrows()
            )));
        }
        let (corr_a, scales_a) = cov_to_corr(p_a)?;
        let (corr_b, scales_b) = cov_to_corr(p_b)?;
        Ok(Self {
            corr_a,
            corr_b,
            scales_a,
            scales_b,
            free: pattern.free_entries(),
            rng: seeded(seed),
            budget: RETRY_BUDGET,
        })
    }

    /// Override the per-sample proposal budget.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn free_entries(&self) -> usize {
        self.free.len()
    }

    pub fn draw(&mut self) -> Result<UncertaintySample> {
        let (da, db) = (self.corr_a.nrows(), self.corr_b.nrows());
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid interval");
        let mut c_ab = DMatrix::zeros(da, db);
        for attempt in 1..=self.budget {
            for &(i, j) in &self.free {
                c_ab[(i, j)] = unit.sample(&mut self.rng);
            }
            // Empty proposals are always inside U (marginals are SPD).
            if self.free.is_empty() || self.accepts(&c_ab) {
                let p_ab = DMatrix::from_fn(da, db, |i, j| c_ab[(i, j)] * self.scales_a[i] * self.scales_b[j]);
                return Ok(UncertaintySample { p_ab, attempts: attempt });
            }
        }
        Err(FusionError::RetryBudgetExhausted { budget: self.budget, free: self.free.len() })
    }

    fn accepts(&self, c_ab: &DMatrix<f64>) -> bool {
        min_eigenvalue(&assemble_joint(&self.corr_a, &self.corr_b, c_ab)) > ACCEPT_MARGIN
    }
}

impl Iterator for CrossSampler {
    type Item = Result<UncertaintySample>;
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.draw())
    }
}

/// One draw from `U`.
pub fn sample_cross(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    pattern: &CrossSparsityPattern,
    rng_seed: u64,
) -> Result<UncertaintySample> {
    CrossSampler::new(p_a, p_b, pattern, rng_seed)?.draw()
}

/// `n` independent draws from `U`, deterministic in the seed.
pub fn sample_set(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    pattern: &CrossSparsityPattern,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<UncertaintySample>> {
    if n == 0 {
        return Err(FusionError::InvalidArgument("sample count must be at least 1".into()));
    }
    CrossSampler::new(p_a, p_b, pattern, rng_seed)?.take(n).collect()
}
