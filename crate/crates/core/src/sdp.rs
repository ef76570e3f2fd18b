//! Sampled robust fusion as a semidefinite program.
//!
//! For samples `P'_1 … P'_n` of the joint covariance the problem is
//!
//! ```text
//! minimize    tr P̄
//! subject to  [[P̄, K], [Kᵀ, P'_i⁻¹]] ⪰ 0,   K = [K_a, I − K_a],   i = 1..n
//! ```
//!
//! which is the Schur-complement form of `P̄ ⪰ K P'_i Kᵀ`. The unbiasedness
//! constraint `K_a + K_b = I` is eliminated by substitution, leaving `d²`
//! gain variables and `d(d+1)/2` bound variables.
//!
//! The solver follows the log-det central path `M_i Z_i = μ I` with
//! primal-dual (HKM) Newton steps, shrinking the target `μ` by a constant
//! factor per step. The dual starts feasible and stays feasible, so
//! `Σ tr(M_i Z_i)` is a duality gap; it is reported relative to the
//! objective as `gap`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::estimate::{matrix_to_rows, GaussianEstimate};
use crate::matrix::{assemble_joint, check_spd, symmetrize};
use crate::result::{Diagnostics, FusionResult, MethodTag};
use crate::sampler::{CrossSampler, UncertaintySample};
use crate::structure::CrossSparsityPattern;

/// Smallest Cholesky pivot of a sample joint covariance, relative to its
/// largest diagonal entry.
pub const MIN_PIVOT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    InfeasibleNumerics,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::InfeasibleNumerics => "infeasible_numerics",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target relative duality gap.
    pub tol: f64,
    /// Path-following step budget.
    pub max_iters: usize,
    /// Central-path target `μ` shrinks by this factor per step.
    pub barrier_reduction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 200, barrier_reduction: 0.2 }
    }
}

/// Sampled fusion problem with precomputed joint inverses.
#[derive(Debug, Clone)]
pub struct SampledFusionProblem {
    p_a: DMatrix<f64>,
    p_b: DMatrix<f64>,
    joints: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
}

/// Inverse of a sample joint, or `None` when the factorization is too
/// poorly conditioned for the LMI.
fn conditioned_inverse(joint: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = Cholesky::new(symmetrize(joint))?;
    let max_diag = joint.diagonal().max();
    let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if !(min_pivot >= MIN_PIVOT * max_diag) {
        return None;
    }
    Some(symmetrize(&chol.inverse()))
}

impl SampledFusionProblem {
    /// Problem from cross-covariance samples.
    pub fn build(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, samples: &[UncertaintySample]) -> Result<Self> {
        let joints: Vec<_> = samples.iter().map(|s| assemble_joint(p_a, p_b, &s.p_ab)).collect();
        Self::from_joints(p_a, p_b, joints)
    }

    /// Problem from assembled joint covariances `P'_i`.
    pub fn from_joints(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, joints: Vec<DMatrix<f64>>) -> Result<Self> {
        check_spd(p_a, "P_a")?;
        check_spd(p_b, "P_b")?;
        let d = p_a.nrows();
        if p_b.nrows() != d {
            return Err(FusionError::DimensionMismatch(format!(
                "marginals have dimensions {d} and {}",
                p_b.nrows()
            )));
        }
        if joints.is_empty() {
            return Err(FusionError::InvalidArgument("at least one sample is required".into()));
        }
        if let Some(i) = joints.iter().position(|j| j.shape() != (2 * d, 2 * d)) {
            return Err(FusionError::DimensionMismatch(format!(
                "sample {i} is {:?}, expected {}x{}",
                joints[i].shape(),
                2 * d,
                2 * d
            )));
        }
        let inverses = joints
            .par_iter()
            .enumerate()
            .map(|(i, j)| {
                conditioned_inverse(j)
                    .ok_or_else(|| FusionError::NotPositiveDefinite(format!("joint covariance of sample {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p_a: p_a.clone(), p_b: p_b.clone(), joints, inverses })
    }

    pub fn dim(&self) -> usize {
        self.p_a.nrows()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Order of each LMI block, `3d`.
    pub fn lmi_size(&self) -> usize {
        3 * self.dim()
    }

    pub fn joints(&self) -> &[DMatrix<f64>] {
        &self.joints
    }

    pub fn inverses(&self) -> &[DMatrix<f64>] {
        &self.inverses
    }

    pub fn p_a(&self) -> &DMatrix<f64> {
        &self.p_a
    }

    pub fn p_b(&self) -> &DMatrix<f64> {
        &self.p_b
    }

    /// LMI matrix of sample `i` at the given gains and bound.
    pub fn lmi(&self, i: usize, gain_a: &DMatrix<f64>, bound: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(3 * d, 3 * d);
        fill_common(&mut m, d, gain_a, bound);
        m.view_mut((d, d), (2 * d, 2 * d)).copy_from(&self.inverses[i]);
        m
    }

    /// Smallest eigenvalue over all LMI blocks.
    pub fn min_lmi_eigenvalue(&self, gain_a: &DMatrix<f64>, bound: &DMatrix<f64>) -> f64 {
        (0..self.len())
            .map(|i| crate::matrix::min_eigenvalue(&self.lmi(i, gain_a, bound)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Every LMI block strictly positive definite.
    pub fn is_strictly_feasible(&self, gain_a: &DMatrix<f64>, bound: &DMatrix<f64>) -> bool {
        (0..self.len()).all(|i| Cholesky::new(self.lmi(i, gain_a, bound)).is_some())
    }

    pub fn to_record(&self) -> ProblemRecord {
        ProblemRecord {
            dim: self.dim(),
            p_a: matrix_to_rows(&self.p_a),
            p_b: matrix_to_rows(&self.p_b),
            joints: self.joints.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// Serialized problem, for cross-checking against external solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub dim: usize,
    pub p_a: Vec<Vec<f64>>,
    pub p_b: Vec<Vec<f64>>,
    pub joints: Vec<Vec<Vec<f64>>>,
}

/// Build the sampled problem from sampler output.
pub fn build_problem(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    samples: &[UncertaintySample],
) -> Result<SampledFusionProblem> {
    SampledFusionProblem::build(p_a, p_b, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub gain_a: DMatrix<f64>,
    pub gain_b: DMatrix<f64>,
    pub bound: DMatrix<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    /// Relative duality gap `Σ tr(S_i Z_i) / |objective|`.
    pub gap: f64,
    /// Path-following steps taken.
    pub iterations: usize,
}

impl SdpSolution {
    pub fn to_record(&self) -> SolutionRecord {
        SolutionRecord {
            gain_a: matrix_to_rows(&self.gain_a),
            gain_b: matrix_to_rows(&self.gain_b),
            bound: matrix_to_rows(&self.bound),
            objective: self.objective,
            status: self.status,
            gap: self.gap,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub gain_a: Vec<Vec<f64>>,
    pub gain_b: Vec<Vec<f64>>,
    pub bound: Vec<Vec<f64>>,
    pub objective: f64,
    pub status: SolverStatus,
    pub gap: f64,
    pub iterations: usize,
}

/// Write `P̄`, `K = [K_a, I − K_a]` and `Kᵀ` into the leading blocks of `m`.
fn fill_common(m: &mut DMatrix<f64>, d: usize, gain_a: &DMatrix<f64>, bound: &DMatrix<f64>) {
    for r in 0..d {
        for c in 0..d {
            m[(r, c)] = bound[(r, c)];
            let ka = gain_a[(r, c)];
            let kb = if r == c { 1.0 - ka } else { -ka };
            m[(r, d + c)] = ka;
            m[(d + c, r)] = ka;
            m[(r, 2 * d + c)] = kb;
            m[(2 * d + c, r)] = kb;
        }
    }
}

/// Variable layout: `K_a` row-major, then the upper triangle of `P̄`.
struct Layout {
    d: usize,
    /// Nonzero `(row, col, value)` entries of each variable's basis matrix.
    basis: Vec<Vec<(usize, usize, f64)>>,
    /// Objective coefficients: 1 on diagonal bound entries.
    cost: Vec<f64>,
}

impl Layout {
    fn new(d: usize) -> Self {
        let mut basis = Vec::new();
        let mut cost = Vec::new();
        for r in 0..d {
            for c in 0..d {
                basis.push(vec![
                    (r, d + c, 1.0),
                    (d + c, r, 1.0),
                    (r, 2 * d + c, -1.0),
                    (2 * d + c, r, -1.0),
                ]);
                cost.push(0.0);
            }
        }
        for r in 0..d {
            for c in r..d {
                if r == c {
                    basis.push(vec![(r, r, 1.0)]);
                    cost.push(1.0);
                } else {
                    basis.push(vec![(r, c, 1.0), (c, r, 1.0)]);
                    cost.push(0.0);
                }
            }
        }
        Self { d, basis, cost }
    }

    fn nvars(&self) -> usize {
        self.basis.len()
    }

    fn pack(&self, gain_a: &DMatrix<f64>, bound: &DMatrix<f64>) -> Vec<f64> {
        let d = self.d;
        let mut x: Vec<f64> = gain_a.transpose().iter().copied().collect();
        for r in 0..d {
            for c in r..d {
                x.push(bound[(r, c)]);
            }
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.d;
        let gain_a = DMatrix::from_row_slice(d, d, &x[..d * d]);
        let mut bound = DMatrix::zeros(d, d);
        let mut k = d * d;
        for r in 0..d {
            for c in r..d {
                bound[(r, c)] = x[k];
                bound[(c, r)] = x[k];
                k += 1;
            }
        }
        (gain_a, bound)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.cost).map(|(a, b)| a * b).sum()
    }
}

/// Per-sample factorizations at the current primal point.
struct Slack {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    inv: DMatrix<f64>,
}

struct Lmis<'a> {
    problem: &'a SampledFusionProblem,
    layout: Layout,
}

impl Lmis<'_> {
    fn common(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.layout.d;
        let (gain_a, bound) = self.layout.unpack(x);
        let mut m = DMatrix::zeros(3 * d, 3 * d);
        fill_common(&mut m, d, &gain_a, &bound);
        m
    }

    /// `S_i = M_i(x)` for every sample, or `None` if any is not PD.
    fn slacks(&self, x: &[f64]) -> Option<Vec<Slack>> {
        let d = self.layout.d;
        let mut m = self.common(x);
        self.problem
            .inverses
            .iter()
            .map(|q| {
                m.view_mut((d, d), (2 * d, 2 * d)).copy_from(q);
                let chol = Cholesky::new(m.clone())?;
                let inv = chol.inverse();
                Some(Slack { mat: m.clone(), chol, inv })
            })
            .collect()
    }

    /// `Σ_j v_j F_j` for a direction `v` in variable space.
    fn direction(&self, v: &[f64]) -> DMatrix<f64> {
        let d = self.layout.d;
        let mut delta = DMatrix::zeros(3 * d, 3 * d);
        for (basis, s) in self.layout.basis.iter().zip(v) {
            for &(r, c, w) in basis {
                delta[(r, c)] += w * s;
            }
        }
        delta
    }
}

/// `tr(F_j A)` for a sparse basis matrix.
fn basis_dot(basis: &[(usize, usize, f64)], a: &DMatrix<f64>) -> f64 {
    basis.iter().map(|&(p, q, v)| v * a[(q, p)]).sum()
}

/// Largest `α` with `L⁻¹ (A + α Δ) L⁻ᵀ` still PD, where `A = L Lᵀ`.
fn max_step(chol: &Cholesky<f64, Dyn>, delta: &DMatrix<f64>) -> Option<f64> {
    let l = chol.l();
    let left = l.solve_lower_triangular(delta)?;
    let w = l.solve_lower_triangular(&left.transpose())?;
    let lowest = symmetrize(&w).symmetric_eigenvalues().min();
    Some(if lowest < 0.0 { -1.0 / lowest } else { f64::INFINITY })
}

/// Solve `H Δ = rhs` for a symmetric PD `H`, regularizing if needed.
fn newton_direction(hess: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let b = nalgebra::DVector::from_column_slice(rhs);
    let scale = hess.diagonal().max().max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += reg;
        }
        if let Some(chol) = Cholesky::new(h) {
            let sol = chol.solve(&b);
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol.iter().copied().collect());
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

/// Solve with default options and the given tolerance and step budget.
pub fn solve(problem: &SampledFusionProblem, tol: f64, max_iters: usize) -> SdpSolution {
    solve_with(problem, &SolverOptions { tol, max_iters, ..SolverOptions::default() })
}

pub fn solve_with(problem: &SampledFusionProblem, opts: &SolverOptions) -> SdpSolution {
    const STEP_FRACTION: f64 = 0.95;

    let d = problem.dim();
    let n = problem.len();
    let lmis = Lmis { problem, layout: Layout::new(d) };
    let layout = &lmis.layout;
    let identity = DMatrix::<f64>::identity(d, d);

    // K_a = K_b = I/2 with P̄ = 2(P_a + P_b) is strictly feasible for every
    // PD joint; inflate the bound if rounding says otherwise.
    let gain0 = &identity * 0.5;
    let mut bound0 = (problem.p_a() + problem.p_b()) * 2.0;
    let mut x = layout.pack(&gain0, &bound0);
    let mut slacks = lmis.slacks(&x);
    let mut inflations = 0;
    while slacks.is_none() && inflations < 60 {
        bound0 *= 2.0;
        x = layout.pack(&gain0, &bound0);
        slacks = lmis.slacks(&x);
        inflations += 1;
    }
    let finish = |x: &[f64], status: SolverStatus, gap: f64, iterations: usize| {
        let (gain_a, bound) = layout.unpack(x);
        SdpSolution {
            gain_b: &identity - &gain_a,
            objective: bound.trace(),
            gain_a,
            bound,
            status,
            gap,
            iterations,
        }
    };
    let Some(mut slacks) = slacks else {
        return finish(&x, SolverStatus::InfeasibleNumerics, f64::INFINITY, 0);
    };

    // Z_i = I/n satisfies Σ_i tr(F_j Z_i) = c_j exactly, so the dual stays
    // feasible and tr(Σ S_i Z_i) is the duality gap.
    let mut duals: Vec<DMatrix<f64>> = vec![DMatrix::identity(3 * d, 3 * d) / n as f64; n];
    let order = (n * problem.lmi_size()) as f64;
    let nv = layout.nvars();
    let gap_of = |slacks: &[Slack], duals: &[DMatrix<f64>], x: &[f64]| {
        let complementarity: f64 = slacks
            .iter()
            .zip(duals)
            .map(|(s, z)| s.mat.component_mul(z).sum())
            .sum();
        complementarity / layout.objective(x).abs().max(1e-300)
    };

    let mut iterations = 0;
    loop {
        let gap = gap_of(&slacks, &duals, &x);
        if gap <= opts.tol {
            return finish(&x, SolverStatus::Optimal, gap, iterations);
        }
        if iterations >= opts.max_iters {
            return finish(&x, SolverStatus::MaxIterations, gap, iterations);
        }
        iterations += 1;

        let mu_now = gap * layout.objective(&x).abs() / order;
        let mu = opts.barrier_reduction * mu_now;

        // Schur complement H_jk = Σ_i tr(F_j Z_i F_k S_i⁻¹) and right-hand
        // side μ Σ_i tr(F_j S_i⁻¹) − c_j of the HKM direction.
        let mut hess = DMatrix::zeros(nv, nv);
        let mut rhs: Vec<f64> = layout.cost.iter().map(|c| -c).collect();
        let basis = &layout.basis;
        for (s, z) in slacks.iter().zip(&duals) {
            for j in 0..nv {
                rhs[j] += mu * basis_dot(&basis[j], &s.inv);
                for k in j..nv {
                    let mut acc = 0.0;
                    for &(p, q, v) in &basis[j] {
                        for &(r, c, w) in &basis[k] {
                            acc += v * w * z[(q, r)] * s.inv[(c, p)];
                        }
                    }
                    hess[(j, k)] += acc;
                }
            }
        }
        for j in 0..nv {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        let Some(dx) = newton_direction(&hess, &rhs) else {
            return finish(&x, SolverStatus::InfeasibleNumerics, gap, iterations);
        };
        let ds = lmis.direction(&dx);

        let mut primal_limit = f64::INFINITY;
        let mut dual_limit = f64::INFINITY;
        let mut dzs = Vec::with_capacity(n);
        for (s, z) in slacks.iter().zip(&duals) {
            let cross = z * &ds * &s.inv;
            let dz = &s.inv * mu - z - (&cross + cross.transpose()) * 0.5;
            let Some(zchol) = Cholesky::new(z.clone()) else {
                return finish(&x, SolverStatus::InfeasibleNumerics, gap, iterations);
            };
            match (max_step(&s.chol, &ds), max_step(&zchol, &dz)) {
                (Some(p), Some(q)) => {
                    primal_limit = primal_limit.min(p);
                    dual_limit = dual_limit.min(q);
                }
                _ => return finish(&x, SolverStatus::InfeasibleNumerics, gap, iterations),
            }
            dzs.push(dz);
        }
        let mut alpha_p = (STEP_FRACTION * primal_limit).min(1.0);
        let alpha_d = (STEP_FRACTION * dual_limit).min(1.0);

        // Roundoff can still leave a block indefinite; shorten the step.
        let new_slacks = loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + alpha_p * di).collect();
            if let Some(s) = lmis.slacks(&trial) {
                x = trial;
                break Some(s);
            }
            alpha_p *= 0.5;
            if alpha_p < 1e-14 {
                break None;
            }
        };
        let Some(new_slacks) = new_slacks else {
            return finish(&x, SolverStatus::InfeasibleNumerics, gap, iterations);
        };
        slacks = new_slacks;
        let mut alpha_d = alpha_d;
        let new_duals = loop {
            let trial: Vec<DMatrix<f64>> =
                duals.iter().zip(&dzs).map(|(z, dz)| symmetrize(&(z + dz * alpha_d))).collect();
            if trial.iter().all(|z| Cholesky::new(z.clone()).is_some()) {
                break Some(trial);
            }
            alpha_d *= 0.5;
            if alpha_d < 1e-14 {
                break None;
            }
        };
        let Some(new_duals) = new_duals else {
            return finish(&x, SolverStatus::InfeasibleNumerics, gap, iterations);
        };
        duals = new_duals;
    }
}

/// Sampled robust fusion: draw `n` cross-covariances from the uncertainty
/// set, build the LMI problem and solve it.
pub fn robust_fuse(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    pattern: &CrossSparsityPattern,
    n: usize,
    rng_seed: u64,
    tol: f64,
) -> Result<FusionResult> {
    robust_fuse_with(a, b, pattern, n, rng_seed, &SolverOptions { tol, ..SolverOptions::default() })
}

pub fn robust_fuse_with(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    pattern: &CrossSparsityPattern,
    n: usize,
    rng_seed: u64,
    opts: &SolverOptions,
) -> Result<FusionResult> {
    a.check_compatible(b)?;
    if n == 0 {
        return Err(FusionError::InvalidArgument("sample count must be at least 1".into()));
    }
    let problem = draw_problem(a.covariance(), b.covariance(), pattern, n, rng_seed)?;
    let sol = solve_with(&problem, opts);
    if sol.status == SolverStatus::InfeasibleNumerics {
        return Err(FusionError::Solver(format!("status {}", sol.status)));
    }
    Ok(FusionResult {
        fused_mean: &sol.gain_a * a.mean() + &sol.gain_b * b.mean(),
        gain_a: sol.gain_a,
        gain_b: sol.gain_b,
        bound: sol.bound,
        omega: None,
        method: MethodTag::Sdp,
        labels: a.labels().to_vec(),
        diagnostics: Diagnostics {
            samples: Some(n),
            seed: Some(rng_seed),
            solver_status: Some(sol.status),
            gap: Some(sol.gap),
            iterations: Some(sol.iterations),
            ..Diagnostics::default()
        },
    })
}

/// First `n` well-conditioned draws of the sampler stream seeded with
/// `rng_seed`. Poorly conditioned draws are skipped, so problems for
/// increasing `n` under one seed are nested.
pub fn draw_problem(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    pattern: &CrossSparsityPattern,
    n: usize,
    rng_seed: u64,
) -> Result<SampledFusionProblem> {
    let mut sampler = CrossSampler::new(p_a, p_b, pattern, rng_seed)?;
    let mut joints = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while joints.len() < n {
        let sample = sampler.draw()?;
        let joint = assemble_joint(p_a, p_b, &sample.p_ab);
        if conditioned_inverse(&joint).is_some() {
            joints.push(joint);
        } else {
            rejected += 1;
            if rejected > 100 * n + 1000 {
                return Err(FusionError::Solver(
                    "too many ill-conditioned samples; marginals are near-degenerate".into(),
                ));
            }
        }
    }
    SampledFusionProblem::from_joints(p_a, p_b, joints)
}
