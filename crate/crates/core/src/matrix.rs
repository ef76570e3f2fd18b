//! Dense symmetric-matrix utilities shared by the fusion rules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FusionError, Result};

/// Relative Frobenius asymmetry accepted for "symmetric" inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Minimum eigenvalue of an SPD matrix, relative to its largest eigenvalue.
pub const SPD_EIG_FLOOR: f64 = 1e-12;

/// `‖M − Mᵀ‖_F / ‖M‖_F`, zero for the zero matrix.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FusionError::DimensionMismatch(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_square(m, what)?;
    let asym = asymmetry(m);
    if !(asym <= SYMMETRY_TOL) {
        return Err(FusionError::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of `(M + Mᵀ)/2`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m)[0]
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric with all eigenvalues above `SPD_EIG_FLOOR × λ_max`.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_symmetric(m, what)?;
    if m.nrows() == 0 {
        return Err(FusionError::DimensionMismatch(format!("{what} is empty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FusionError::NotPositiveDefinite(format!("{what} (non-finite entries)")));
    }
    let ev = sym_eigenvalues(m);
    let max = ev[ev.len() - 1];
    if !(max > 0.0) || !(ev[0] > SPD_EIG_FLOOR * max) {
        return Err(FusionError::NotPositiveDefinite(what.to_string()));
    }
    Ok(())
}

/// Inverse of an SPD matrix via Cholesky, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| FusionError::NotPositiveDefinite(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `true` iff `λ_min(bound − actual) ≥ −tol`.
pub fn is_conservative(bound: &DMatrix<f64>, actual: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if bound.shape() != actual.shape() {
        return Err(FusionError::DimensionMismatch(format!(
            "bound is {:?}, actual is {:?}",
            bound.shape(),
            actual.shape()
        )));
    }
    check_symmetric(bound, "bound")?;
    check_symmetric(actual, "actual covariance")?;
    Ok(min_eigenvalue(&(bound - actual)) >= -tol)
}

/// Split an SPD matrix into its correlation matrix and standard deviations.
pub fn cov_to_corr(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_square(p, "covariance")?;
    let scales = DVector::from_iterator(
        p.nrows(),
        (0..p.nrows()).map(|i| p[(i, i)]),
    );
    if let Some(i) = scales.iter().position(|v| !(*v > 0.0)) {
        return Err(FusionError::NotPositiveDefinite(format!(
            "covariance (diagonal entry {i} is {})",
            p[(i, i)]
        )));
    }
    let scales = scales.map(f64::sqrt);
    let corr = DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            p[(i, j)] / (scales[i] * scales[j])
        }
    });
    Ok((corr, scales))
}

pub fn corr_to_cov(corr: &DMatrix<f64>, scales: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(corr.nrows(), corr.ncols(), |i, j| corr[(i, j)] * scales[i] * scales[j])
}

/// Groups of indices coupled through any nonzero off-diagonal entry of any
/// of the given matrices. Components are sorted and listed by smallest index.
pub fn coupled_components(mats: &[&DMatrix<f64>]) -> Vec<Vec<usize>> {
    let d = mats.first().map_or(0, |m| m.nrows());
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for m in mats {
        for j in 0..d {
            for i in (j + 1)..d {
                if m[(i, j)] != 0.0 || m[(j, i)] != 0.0 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; d];
    for i in 0..d {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Write `block` into `target` at the given row/column index lists.
pub fn scatter(target: &mut DMatrix<f64>, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in cols.iter().enumerate() {
            target[(i, j)] = block[(bi, bj)];
        }
    }
}

/// Stack `[[a, ab], [abᵀ, b]]`.
pub fn assemble_joint(a: &DMatrix<f64>, b: &DMatrix<f64>, ab: &DMatrix<f64>) -> DMatrix<f64> {
    let (da, db) = (a.nrows(), b.nrows());
    let mut joint = DMatrix::zeros(da + db, da + db);
    joint.view_mut((0, 0), (da, da)).copy_from(a);
    joint.view_mut((da, da), (db, db)).copy_from(b);
    joint.view_mut((0, da), (da, db)).copy_from(ab);
    joint.view_mut((da, 0), (db, da)).copy_from(&ab.transpose());
    joint
}

/// Moore–Penrose inverse of a symmetric PSD matrix, dropping eigenvalues
/// below `rel_tol × λ_max`.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = rel_tol * max;
    let inv = eig
        .eigenvalues
        .map(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
