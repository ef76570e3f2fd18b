//! Consistency and accuracy metrics, and the Monte Carlo comparison of
//! nmCI against the sampled-SDP bound.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::estimate::GaussianEstimate;
use crate::fusion::{nmci_fuse, realized_cov, BlockMode, BLOCK_DIAGONAL_TOL};
use crate::matrix::{min_eigenvalue, sym_spectral_norm};
use crate::rng::{stream_rng, Stream};
use crate::sampler::CrossSampler;
use crate::sdp::{draw_problem, solve_with, SolverOptions, SolverStatus};
use crate::special::chi2_quantile;
use crate::structure::{CrossSparsityPattern, JointCovariance};

/// Normalized estimation error squared `eᵀ P⁻¹ e`, `e = mean − truth`.
pub fn nees(estimate: &GaussianEstimate, truth: &DVector<f64>) -> Result<f64> {
    nees_parts(estimate.mean(), estimate.covariance(), truth)
}

pub fn nees_parts(mean: &DVector<f64>, cov: &DMatrix<f64>, truth: &DVector<f64>) -> Result<f64> {
    if mean.len() != truth.len() || cov.shape() != (mean.len(), mean.len()) {
        return Err(FusionError::DimensionMismatch(format!(
            "estimate of dimension {} against truth of dimension {}",
            mean.len(),
            truth.len()
        )));
    }
    let err = mean - truth;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| FusionError::Singular("covariance in NEES".into()))?;
    Ok(err.dot(&chol.solve(&err)).max(0.0))
}

/// Two-sided interval for the run-averaged NEES.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareBand {
    pub lower: f64,
    pub upper: f64,
    pub dof: usize,
    pub runs: usize,
    pub level: f64,
}

impl ChiSquareBand {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// Quantiles of `χ²(runs·dof) / runs` at `(1 ∓ level)/2`.
pub fn chi2_band(dof: usize, runs: usize, level: f64) -> Result<ChiSquareBand> {
    if dof == 0 || runs == 0 || !(level > 0.0 && level < 1.0) {
        return Err(FusionError::InvalidArgument(format!(
            "chi-square band needs dof ≥ 1, runs ≥ 1, level in (0, 1); got {dof}, {runs}, {level}"
        )));
    }
    let total = (dof * runs) as f64;
    let tail = 0.5 * (1.0 - level);
    Ok(ChiSquareBand {
        lower: chi2_quantile(total, tail) / runs as f64,
        upper: chi2_quantile(total, 1.0 - tail) / runs as f64,
        dof,
        runs,
        level,
    })
}

/// Fraction of entries of `series` inside `band`.
pub fn fraction_inside(series: &[f64], band: &ChiSquareBand) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    series.iter().filter(|v| band.contains(**v)).count() as f64 / series.len() as f64
}

/// `sqrt(mean_k ‖est_k − truth_k‖²)` over a trajectory of position vectors.
pub fn rmse(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(FusionError::InvalidArgument("empty trajectory".into()));
    }
    if estimates.len() != truths.len() {
        return Err(FusionError::DimensionMismatch(format!(
            "{} estimates against {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        if e.len() != t.len() {
            return Err(FusionError::DimensionMismatch("trajectory entries differ in length".into()));
        }
        total += (e - t).norm_squared();
    }
    Ok((total / estimates.len() as f64).sqrt())
}

/// "Average 2σ": twice the root of the mean variance over the given
/// position coordinates.
pub fn two_sigma(cov: &DMatrix<f64>, position_indices: &[usize]) -> f64 {
    if position_indices.is_empty() {
        return 0.0;
    }
    let mean_var = position_indices.iter().map(|&i| cov[(i, i)]).sum::<f64>() / position_indices.len() as f64;
    2.0 * mean_var.sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One fusion weight record from a tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaRecord {
    pub run: usize,
    pub step: usize,
    pub agent_a: usize,
    pub agent_b: usize,
    pub weights: Vec<f64>,
}

/// Monte Carlo aggregates for one method of a tracking study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStatistics {
    /// Per-step NEES averaged over runs.
    pub nees_series: Vec<f64>,
    pub chi2_bounds: ChiSquareBand,
    /// Arithmetic mean of per-run RMSE.
    pub rmse_mean: f64,
    /// Time-and-run mean of the average 2σ.
    pub sigma2_mean: f64,
    pub omega_log: Vec<OmegaRecord>,
    pub conservativeness: Vec<SweepRow>,
}

impl McStatistics {
    pub fn fraction_consistent(&self) -> f64 {
        fraction_inside(&self.nees_series, &self.chi2_bounds)
    }
}

/// Element-wise mean of equally long per-run series.
pub fn average_series(runs: &[Vec<f64>]) -> Vec<f64> {
    let Some(len) = runs.first().map(Vec::len) else {
        return Vec::new();
    };
    (0..len).map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len() as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    /// `‖P_nmCI − P_opt‖₂` over runs.
    pub deviation: Spread,
    /// `λ_min(P_nmCI − P_f)` over runs.
    pub nmci_min_eig: Spread,
    /// `λ_min(P_opt − P_f)` over runs.
    pub sdp_min_eig: Spread,
    pub sdp_objective_median: f64,
    /// Solves that ended without status `optimal`.
    pub nonoptimal: usize,
}

/// Per-run measurements of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub n: usize,
    pub run: usize,
    pub deviation: f64,
    pub nmci_min_eig: f64,
    pub sdp_min_eig: f64,
    pub sdp_objective: f64,
    pub status: SolverStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub nmci_bound: DMatrix<f64>,
    pub nmci_omega: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

/// Compare nmCI with the sampled-SDP bound for several sample counts.
///
/// Run `r` uses one sampler stream for every `n`, so the sample sets are
/// nested, and one independently drawn "true" cross-covariance against
/// which both bounds are checked.
pub fn conservativeness_sweep(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    pattern: &CrossSparsityPattern,
    n_values: &[usize],
    mc_runs: usize,
    seed: u64,
) -> Result<SweepReport> {
    conservativeness_sweep_with(p_a, p_b, pattern, n_values, mc_runs, seed, &SolverOptions::default())
}

pub fn conservativeness_sweep_with(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    pattern: &CrossSparsityPattern,
    n_values: &[usize],
    mc_runs: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SweepReport> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(FusionError::InvalidArgument("sample counts must be non-empty and positive".into()));
    }
    if mc_runs == 0 {
        return Err(FusionError::InvalidArgument("at least one Monte Carlo run is required".into()));
    }
    let d = p_a.nrows();
    let zero = DVector::zeros(d);
    let a = GaussianEstimate::with_default_labels(zero.clone(), p_a.clone())?;
    let b = GaussianEstimate::with_default_labels(zero, p_b.clone())?;
    let partition = pattern.independence_partition(p_a, p_b, BLOCK_DIAGONAL_TOL)?;
    let nm = nmci_fuse(&a, &b, &partition, BlockMode::Strict)?;

    let per_run: Vec<Vec<SweepRun>> = (0..mc_runs)
        .into_par_iter()
        .map(|run| {
            let truth_seed = stream_rng(seed, Stream::TrueCorrelation, run as u64).next_u64();
            let true_ab = CrossSampler::new(p_a, p_b, pattern, truth_seed)?.draw()?.p_ab;
            let joint = JointCovariance::new(p_a.clone(), p_b.clone(), true_ab)?;
            let nm_margin = min_eigenvalue(&(&nm.bound - realized_cov(&nm.gain_a, &nm.gain_b, &joint)?));
            let sampler_seed = stream_rng(seed, Stream::Sampler, run as u64).next_u64();
            n_values
                .iter()
                .map(|&n| {
                    let problem = draw_problem(p_a, p_b, pattern, n, sampler_seed)?;
                    let sol = solve_with(&problem, opts);
                    if sol.status == SolverStatus::InfeasibleNumerics {
                        return Err(FusionError::Solver(format!("run {run}, n={n}: status {}", sol.status)));
                    }
                    let realized = realized_cov(&sol.gain_a, &sol.gain_b, &joint)?;
                    Ok(SweepRun {
                        n,
                        run,
                        deviation: sym_spectral_norm(&(&nm.bound - &sol.bound)),
                        nmci_min_eig: nm_margin,
                        sdp_min_eig: min_eigenvalue(&(&sol.bound - realized)),
                        sdp_objective: sol.objective,
                        status: sol.status,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let runs: Vec<SweepRun> = n_values
        .iter()
        .enumerate()
        .flat_map(|(k, _)| per_run.iter().map(move |r| r[k].clone()))
        .collect();
    let rows = n_values
        .iter()
        .map(|&n| {
            let at: Vec<&SweepRun> = runs.iter().filter(|r| r.n == n).collect();
            let pick = |f: fn(&SweepRun) -> f64| at.iter().map(|r| f(r)).collect::<Vec<_>>();
            SweepRow {
                n,
                deviation: Spread::of(&pick(|r| r.deviation)),
                nmci_min_eig: Spread::of(&pick(|r| r.nmci_min_eig)),
                sdp_min_eig: Spread::of(&pick(|r| r.sdp_min_eig)),
                sdp_objective_median: median(&pick(|r| r.sdp_objective)),
                nonoptimal: at.iter().filter(|r| r.status != SolverStatus::Optimal).count(),
            }
        })
        .collect();
    Ok(SweepReport { nmci_bound: nm.bound, nmci_omega: nm.omega.unwrap_or_default(), rows, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(mean: &[f64], cov: DMatrix<f64>) -> GaussianEstimate {
        GaussianEstimate::with_default_labels(DVector::from_row_slice(mean), cov).unwrap()
    }

    #[test]
    fn nees_examples() {
        let e = est(&[1.0, 2.0], DMatrix::identity(2, 2));
        assert_eq!(nees(&e, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 0.0);
        let e = est(&[3.0, 4.0], DMatrix::identity(2, 2));
        assert!((nees(&e, &DVector::zeros(2)).unwrap() - 25.0).abs() < 1e-12);
        let e = est(&[2.0], DMatrix::from_element(1, 1, 4.0));
        assert!((nees(&e, &DVector::zeros(1)).unwrap() - 1.0).abs() < 1e-15);
        assert!(nees(&e, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn band_examples() {
        // χ²₂ quantiles are −2 ln(1 − p).
        let b = chi2_band(2, 1, 0.95).unwrap();
        assert!((b.lower - 0.050_635_615_968_579_8).abs() < 1e-9, "{}", b.lower);
        assert!((b.upper - 7.377_758_908_227_871).abs() < 1e-9, "{}", b.upper);
        assert!(b.lower < 2.0 && 2.0 < b.upper);

        let wide = chi2_band(1, 1, 1.0 - 1e-12).unwrap();
        assert!(wide.lower < 1e-20 && wide.upper > 50.0);

        let mut prev = f64::INFINITY;
        for runs in [1, 2, 5, 15, 50, 200] {
            let b = chi2_band(3, runs, 0.95).unwrap();
            assert!(b.upper - b.lower < prev);
            prev = b.upper - b.lower;
        }
        assert!(chi2_band(0, 1, 0.95).is_err());
        assert!(chi2_band(1, 1, 1.0).is_err());
    }

    #[test]
    fn rmse_examples() {
        let zero = vec![DVector::from_vec(vec![1.0, 1.0]); 3];
        assert_eq!(rmse(&zero, &zero).unwrap(), 0.0);
        let shifted: Vec<_> = zero.iter().map(|v| v + DVector::from_vec(vec![2.0, 0.0])).collect();
        assert!((rmse(&shifted, &zero).unwrap() - 2.0).abs() < 1e-15);
        let one = [DVector::from_vec(vec![3.0, 4.0])];
        assert!((rmse(&one, &[DVector::zeros(2)]).unwrap() - 5.0).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn summary_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let s = Spread::of(&[1.0, -2.0, 5.0]);
        assert_eq!((s.median, s.min, s.max), (1.0, -2.0, 5.0));
        assert_eq!(average_series(&[vec![1.0, 2.0], vec![3.0, 6.0]]), vec![2.0, 4.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 100.0, 4.0]));
        assert_eq!(two_sigma(&cov, &[0, 2]), 4.0);
    }
}
