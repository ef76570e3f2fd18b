//! Closed-form fusion rules.
//!
//! Covariance intersection fuses in information form,
//! `P_f⁻¹ = ω P_a⁻¹ + (1−ω) P_b⁻¹`, with `ω` chosen to minimize `tr P_f`.
//! The non-monolithic variant runs the same rule independently on every
//! block of a partition of mutually independent states, one weight per block.

use nalgebra::{DMatrix, DVector};

use crate::error::{FusionError, Result};
use crate::estimate::GaussianEstimate;
use crate::matrix::{
    check_spd, coupled_components, min_eigenvalue, psd_pinv, scatter, spd_inverse, submatrix,
    subvector, sym_eigenvalues, symmetrize,
};
use crate::result::{Diagnostics, FusionResult, MethodTag};
use crate::structure::{BlockPartition, JointCovariance};

/// Argument tolerance of the weight search.
pub const OMEGA_SEARCH_TOL: f64 = 1e-8;

/// Relative cross-block magnitude tolerated as "block-diagonal".
pub const BLOCK_DIAGONAL_TOL: f64 = 1e-9;

/// Per-block CI weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaVector(Vec<f64>);

impl OmegaVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(&w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(FusionError::OmegaOutOfRange(w));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// How `nmci_fuse` treats inputs that are not block-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockMode {
    /// Reject inputs with cross-block entries above `BLOCK_DIAGONAL_TOL`.
    #[default]
    Strict,
    /// Zero cross-block entries of both covariances before fusing.
    Lenient,
}

struct Component {
    idx: Vec<usize>,
    p_a: DMatrix<f64>,
    p_b: DMatrix<f64>,
    info_a: DMatrix<f64>,
    info_b: DMatrix<f64>,
}

/// `f(ω) = tr (ω P_a⁻¹ + (1−ω) P_b⁻¹)⁻¹`, evaluated separately on every group
/// of states the two covariances couple. Exact zeros between groups make the
/// information matrices block-diagonal, so the sum over groups equals the
/// dense evaluation.
struct CiObjective {
    dim: usize,
    comps: Vec<Component>,
}

impl CiObjective {
    fn new(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>) -> Result<Self> {
        let comps = coupled_components(&[p_a, p_b])
            .into_iter()
            .map(|idx| {
                let pa = submatrix(p_a, &idx, &idx);
                let pb = submatrix(p_b, &idx, &idx);
                let info_a = spd_inverse(&pa, "P_a")?;
                let info_b = spd_inverse(&pb, "P_b")?;
                Ok(Component { idx, p_a: pa, p_b: pb, info_a, info_b })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: p_a.nrows(), comps })
    }

    fn eval(&self, omega: f64) -> Result<f64> {
        if omega == 0.0 {
            return Ok(self.comps.iter().map(|c| c.p_b.trace()).sum());
        }
        if omega == 1.0 {
            return Ok(self.comps.iter().map(|c| c.p_a.trace()).sum());
        }
        let mut total = 0.0;
        for c in &self.comps {
            let info = &c.info_a * omega + &c.info_b * (1.0 - omega);
            let chol = info
                .cholesky()
                .ok_or_else(|| FusionError::Singular(format!("combined information at ω={omega}")))?;
            total += chol.inverse().trace();
        }
        Ok(total)
    }

    fn argmin(&self, tol: f64) -> Result<f64> {
        let interior = golden_section(|w| self.eval(w), tol)?;
        // Priority order doubles as the tie-break: 0.5 first.
        let candidates = [0.5, interior, 0.0, 1.0];
        let values = candidates
            .iter()
            .map(|&w| self.eval(w))
            .collect::<Result<Vec<_>>>()?;
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = 1e-12 * best.abs();
        let pick = values.iter().position(|&v| v <= best + slack).unwrap_or(1);
        Ok(candidates[pick])
    }

    /// Bound and gain `K_a` at `ω`.
    fn fuse(&self, omega: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dim;
        let mut bound = DMatrix::zeros(d, d);
        let mut gain_a = DMatrix::zeros(d, d);
        for c in &self.comps {
            let k = c.idx.len();
            let (b, ka) = if omega == 1.0 {
                (c.p_a.clone(), DMatrix::identity(k, k))
            } else if omega == 0.0 {
                (c.p_b.clone(), DMatrix::zeros(k, k))
            } else {
                let info = &c.info_a * omega + &c.info_b * (1.0 - omega);
                let b = spd_inverse(&info, "combined information")
                    .map_err(|_| FusionError::Singular(format!("combined information at ω={omega}")))?;
                let ka = &b * &c.info_a * omega;
                (b, ka)
            };
            scatter(&mut bound, &c.idx, &c.idx, &b);
            scatter(&mut gain_a, &c.idx, &c.idx, &ka);
        }
        Ok((bound, gain_a))
    }
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, tol: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_pair(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>) -> Result<()> {
    if p_a.shape() != p_b.shape() {
        return Err(FusionError::DimensionMismatch(format!(
            "P_a is {:?}, P_b is {:?}",
            p_a.shape(),
            p_b.shape()
        )));
    }
    check_spd(p_a, "P_a")?;
    check_spd(p_b, "P_b")
}

/// Trace-minimizing CI weight, located to within `tol` by golden-section
/// search. The objective is convex in `ω`; flat objectives return 0.5.
pub fn optimize_ci_omega(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(FusionError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    check_pair(p_a, p_b)?;
    CiObjective::new(p_a, p_b)?.argmin(tol)
}

/// `tr (ω P_a⁻¹ + (1−ω) P_b⁻¹)⁻¹`.
pub fn ci_trace(p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, omega: f64) -> Result<f64> {
    check_pair(p_a, p_b)?;
    check_omega(omega)?;
    CiObjective::new(p_a, p_b)?.eval(omega)
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(FusionError::OmegaOutOfRange(omega));
    }
    Ok(())
}

struct BlockFusion {
    bound: DMatrix<f64>,
    gain_a: DMatrix<f64>,
    mean: DVector<f64>,
    omega: f64,
}

fn ci_block(
    p_a: &DMatrix<f64>,
    p_b: &DMatrix<f64>,
    mu_a: &DVector<f64>,
    mu_b: &DVector<f64>,
    omega: Option<f64>,
) -> Result<BlockFusion> {
    let obj = CiObjective::new(p_a, p_b)?;
    let omega = match omega {
        Some(w) => w,
        None => obj.argmin(OMEGA_SEARCH_TOL)?,
    };
    let (bound, gain_a) = obj.fuse(omega)?;
    let d = p_a.nrows();
    let gain_b = DMatrix::identity(d, d) - &gain_a;
    let mean = &gain_a * mu_a + &gain_b * mu_b;
    Ok(BlockFusion { bound, gain_a, mean, omega })
}

/// Monolithic covariance intersection. With `omega = None` the weight is
/// optimized for minimum trace.
///
/// `K_a = ω P_f P_a⁻¹` and `K_b = I − K_a`, which equals `(1−ω) P_f P_b⁻¹`.
pub fn ci_fuse(a: &GaussianEstimate, b: &GaussianEstimate, omega: Option<f64>) -> Result<FusionResult> {
    a.check_compatible(b)?;
    if let Some(w) = omega {
        check_omega(w)?;
    }
    let fused = ci_block(a.covariance(), b.covariance(), a.mean(), b.mean(), omega)?;
    let d = a.dim();
    Ok(FusionResult {
        gain_b: DMatrix::identity(d, d) - &fused.gain_a,
        gain_a: fused.gain_a,
        bound: fused.bound,
        fused_mean: fused.mean,
        omega: Some(vec![fused.omega]),
        method: MethodTag::Ci,
        labels: a.labels().to_vec(),
        diagnostics: Diagnostics::default(),
    })
}

/// Non-monolithic CI: independent trace-optimal CI on every block.
pub fn nmci_fuse(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    partition: &BlockPartition,
    mode: BlockMode,
) -> Result<FusionResult> {
    a.check_compatible(b)?;
    let d = a.dim();
    if partition.dim() != d {
        return Err(FusionError::DimensionMismatch(format!(
            "partition covers {} states, estimates have {d}",
            partition.dim()
        )));
    }
    let mag_a = partition.cross_block_magnitude(a.covariance());
    let mag_b = partition.cross_block_magnitude(b.covariance());
    let mut diagnostics = Diagnostics::default();
    let (p_a, p_b) = match mode {
        BlockMode::Strict => {
            for (which, mag) in [("P_a", mag_a), ("P_b", mag_b)] {
                if mag > BLOCK_DIAGONAL_TOL {
                    return Err(FusionError::NotBlockDiagonal { which: which.into(), magnitude: mag });
                }
            }
            (partition.project(a.covariance()), partition.project(b.covariance()))
        }
        BlockMode::Lenient => {
            diagnostics.projected_cross_block = Some(mag_a.max(mag_b));
            (partition.project(a.covariance()), partition.project(b.covariance()))
        }
    };

    let mut bound = DMatrix::zeros(d, d);
    let mut gain_a = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    let mut omega = Vec::with_capacity(partition.len());
    for block in partition.blocks() {
        let pa = submatrix(&p_a, block, block);
        let pb = submatrix(&p_b, block, block);
        check_pair(&pa, &pb)?;
        let fused = ci_block(&pa, &pb, &subvector(a.mean(), block), &subvector(b.mean(), block), None)?;
        scatter(&mut bound, block, block, &fused.bound);
        scatter(&mut gain_a, block, block, &fused.gain_a);
        for (k, &i) in block.iter().enumerate() {
            mean[i] = fused.mean[k];
        }
        omega.push(fused.omega);
    }
    Ok(FusionResult {
        gain_b: DMatrix::identity(d, d) - &gain_a,
        gain_a,
        bound,
        fused_mean: mean,
        omega: Some(omega),
        method: MethodTag::Nmci,
        labels: a.labels().to_vec(),
        diagnostics,
    })
}

/// Best linear unbiased fusion for a known cross-covariance. Evaluation
/// oracle only: decentralized agents never know `P_ab`.
///
/// `K_b = (P_a − P_ab) S⁺`, `S = P_a + P_b − P_ab − P_abᵀ`. The pseudo-inverse
/// handles perfectly correlated (PSD but singular) joints.
pub fn exact_fuse(a: &GaussianEstimate, b: &GaussianEstimate, p_ab: &DMatrix<f64>) -> Result<FusionResult> {
    a.check_compatible(b)?;
    let joint = JointCovariance::new(a.covariance().clone(), b.covariance().clone(), p_ab.clone())?;
    let ev = sym_eigenvalues(&joint.assemble());
    let max = ev[ev.len() - 1];
    if ev[0] < -1e-12 * max {
        return Err(FusionError::NotPositiveDefinite("joint covariance".into()));
    }
    let d = a.dim();
    let s = a.covariance() + b.covariance() - p_ab - p_ab.transpose();
    let gain_b = (a.covariance() - p_ab) * psd_pinv(&s, 1e-12);
    let gain_a = DMatrix::identity(d, d) - &gain_b;
    let bound = realized_cov(&gain_a, &gain_b, &joint)?;
    Ok(FusionResult {
        fused_mean: &gain_a * a.mean() + &gain_b * b.mean(),
        gain_a,
        gain_b,
        bound,
        omega: None,
        method: MethodTag::Exact,
        labels: a.labels().to_vec(),
        diagnostics: Diagnostics::default(),
    })
}

/// Error covariance of `K_a x_a + K_b x_b` under the joint covariance.
pub fn realized_cov(gain_a: &DMatrix<f64>, gain_b: &DMatrix<f64>, joint: &JointCovariance) -> Result<DMatrix<f64>> {
    let (da, db) = (joint.p_a.nrows(), joint.p_b.nrows());
    if gain_a.ncols() != da || gain_b.ncols() != db || gain_a.nrows() != gain_b.nrows() {
        return Err(FusionError::DimensionMismatch(format!(
            "gains {:?} and {:?} against joint blocks {da} and {db}",
            gain_a.shape(),
            gain_b.shape()
        )));
    }
    let cross = gain_a * &joint.p_ab * gain_b.transpose();
    let p = gain_a * &joint.p_a * gain_a.transpose()
        + &cross
        + cross.transpose()
        + gain_b * &joint.p_b * gain_b.transpose();
    Ok(symmetrize(&p))
}

/// Smallest eigenvalue of `bound − realized`; negative means the bound is
/// not conservative for that correlation.
pub fn conservativeness_margin(result: &FusionResult, joint: &JointCovariance) -> Result<f64> {
    let realized = realized_cov(&result.gain_a, &result.gain_b, joint)?;
    Ok(min_eigenvalue(&(&result.bound - realized)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(mean: &[f64], cov: DMatrix<f64>) -> GaussianEstimate {
        GaussianEstimate::with_default_labels(DVector::from_row_slice(mean), cov).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn ci_identical_covariances() {
        let a = est(&[1.0, 3.0], DMatrix::identity(2, 2));
        let b = est(&[3.0, -1.0], DMatrix::identity(2, 2));
        let r = ci_fuse(&a, &b, Some(0.5)).unwrap();
        assert!((&r.bound - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        assert!((r.fused_mean[0] - 2.0).abs() < 1e-12);
        assert!((r.fused_mean[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ci_scalar_optimum_takes_better_estimate() {
        let a = est(&[5.0], diag(&[3.0]));
        let b = est(&[2.0], diag(&[1.0]));
        let r = ci_fuse(&a, &b, None).unwrap();
        assert_eq!(r.omega, Some(vec![0.0]));
        assert_eq!(r.bound[(0, 0)], 1.0);
        assert_eq!(r.fused_mean[0], 2.0);
    }

    #[test]
    fn ci_scalar_trace_matches_grid() {
        // f(ω) = 1/(1 − 2ω/3) on a 1e-4 grid is increasing, minimum at 0.
        let (pa, pb) = (diag(&[3.0]), diag(&[1.0]));
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=10_000 {
            let w = k as f64 * 1e-4;
            let f = ci_trace(&pa, &pb, w).unwrap();
            assert!((f - 1.0 / (1.0 - 2.0 * w / 3.0)).abs() < 1e-12);
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn ci_omega_one_returns_first() {
        let pa = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let a = est(&[1.0, 2.0], pa.clone());
        let b = est(&[0.0, 0.0], diag(&[1.0, 1.0]));
        let r = ci_fuse(&a, &b, Some(1.0)).unwrap();
        assert_eq!(r.bound, pa);
        assert_eq!(r.fused_mean, a.mean().clone());
        assert_eq!(r.gain_a, DMatrix::identity(2, 2));
        assert_eq!(r.gain_b, DMatrix::zeros(2, 2));
    }

    #[test]
    fn ci_rejects_bad_input() {
        let a = est(&[0.0], diag(&[1.0]));
        let b = est(&[0.0, 0.0], diag(&[1.0, 1.0]));
        assert!(matches!(ci_fuse(&a, &b, None), Err(FusionError::DimensionMismatch(_))));
        assert!(matches!(ci_fuse(&a, &a, Some(1.5)), Err(FusionError::OmegaOutOfRange(_))));
        assert!(matches!(ci_fuse(&a, &a, Some(-0.1)), Err(FusionError::OmegaOutOfRange(_))));
    }

    #[test]
    fn omega_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.5]);
        assert_eq!(optimize_ci_omega(&p, &p, 1e-8).unwrap(), 0.5);
        assert_eq!(optimize_ci_omega(&diag(&[3.0]), &diag(&[1.0]), 1e-8).unwrap(), 0.0);

        let (pa, pb) = (diag(&[3.0, 1.0]), diag(&[1.0, 4.0]));
        let w = optimize_ci_omega(&pa, &pb, 1e-8).unwrap();
        assert!(w > 0.0 && w < 1.0);
        let f = ci_trace(&pa, &pb, w).unwrap();
        assert!(f < 5.0);
        // Dense grid oracle, step 1e-5.
        let (mut best_w, mut best_f) = (0.0, f64::INFINITY);
        for k in 0..=100_000 {
            let g = k as f64 * 1e-5;
            let v = ci_trace(&pa, &pb, g).unwrap();
            if v < best_f {
                best_f = v;
                best_w = g;
            }
        }
        assert!((w - best_w).abs() < 1e-4);
        assert!(f <= best_f + 1e-12);
    }

    #[test]
    fn omega_rejects_bad_input() {
        assert!(optimize_ci_omega(&diag(&[1.0]), &diag(&[1.0]), 0.0).is_err());
        assert!(optimize_ci_omega(&diag(&[1.0, -1.0]), &diag(&[1.0, 1.0]), 1e-8).is_err());
    }

    #[test]
    fn nmci_separable_example() {
        let a = est(&[1.0, 2.0], diag(&[3.0, 1.0]));
        let b = est(&[4.0, 8.0], diag(&[1.0, 4.0]));
        let part = BlockPartition::singletons(2);
        let r = nmci_fuse(&a, &b, &part, BlockMode::Strict).unwrap();
        assert!((&r.bound - diag(&[1.0, 1.0])).norm() < 1e-12);
        assert_eq!(r.omega, Some(vec![0.0, 1.0]));
        assert_eq!(r.fused_mean.as_slice(), &[4.0, 2.0]);
    }

    #[test]
    fn nmci_single_block_is_ci() {
        let a = est(&[1.0, 2.0], DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]));
        let b = est(&[0.0, 1.0], DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 4.0]));
        let nm = nmci_fuse(&a, &b, &BlockPartition::single(2), BlockMode::Strict).unwrap();
        let ci = ci_fuse(&a, &b, None).unwrap();
        assert_eq!(nm.bound, ci.bound);
        assert_eq!(nm.omega, ci.omega);
        assert_eq!(nm.fused_mean, ci.fused_mean);
    }

    #[test]
    fn nmci_identical_inputs_tie_break() {
        let a = est(&[0.0, 0.0], diag(&[2.0, 2.0]));
        let r = nmci_fuse(&a, &a, &BlockPartition::singletons(2), BlockMode::Strict).unwrap();
        assert!((&r.bound - diag(&[2.0, 2.0])).norm() < 1e-12);
        assert_eq!(r.omega, Some(vec![0.5, 0.5]));
    }

    #[test]
    fn nmci_block_diagonal_modes() {
        let coupled = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let a = est(&[0.0, 0.0], coupled);
        let b = est(&[0.0, 0.0], diag(&[1.0, 1.0]));
        let part = BlockPartition::singletons(2);
        assert!(matches!(
            nmci_fuse(&a, &b, &part, BlockMode::Strict),
            Err(FusionError::NotBlockDiagonal { .. })
        ));
        let r = nmci_fuse(&a, &b, &part, BlockMode::Lenient).unwrap();
        assert!((r.diagnostics.projected_cross_block.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(r.bound[(0, 1)], 0.0);
        let wrong_dim = BlockPartition::singletons(3);
        assert!(nmci_fuse(&a, &b, &wrong_dim, BlockMode::Lenient).is_err());
    }

    #[test]
    fn exact_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let a = est(&[0.0, 0.0], i2.clone());
        let b = est(&[2.0, 2.0], i2.clone());
        let r = exact_fuse(&a, &b, &DMatrix::zeros(2, 2)).unwrap();
        assert!((&r.gain_a - &i2 * 0.5).norm() < 1e-12);
        assert!((&r.gain_b - &i2 * 0.5).norm() < 1e-12);
        assert!((&r.bound - &i2 * 0.5).norm() < 1e-12);

        let r = exact_fuse(&a, &b, &i2).unwrap();
        assert!((&r.bound - &i2).norm() < 1e-12);

        let a = est(&[0.0], diag(&[3.0]));
        let b = est(&[1.0], diag(&[1.0]));
        let r = exact_fuse(&a, &b, &DMatrix::zeros(1, 1)).unwrap();
        assert!((r.bound[(0, 0)] - 0.75).abs() < 1e-12);
        assert!((r.fused_mean[0] - 0.75).abs() < 1e-12);

        let not_psd = exact_fuse(&a, &b, &diag(&[2.0]));
        assert!(matches!(not_psd, Err(FusionError::NotPositiveDefinite(_))));
    }

    #[test]
    fn realized_examples() {
        let pa = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let pb = diag(&[1.0, 3.0]);
        let joint = JointCovariance::new(pa.clone(), pb.clone(), DMatrix::zeros(2, 2)).unwrap();
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(realized_cov(&i2, &DMatrix::zeros(2, 2), &joint).unwrap(), pa);
        let half = &i2 * 0.5;
        let r = realized_cov(&half, &half, &joint).unwrap();
        assert!((r - (&pa + &pb) / 4.0).norm() < 1e-15);
        assert!(realized_cov(&DMatrix::identity(3, 3), &i2, &joint).is_err());
    }
}
