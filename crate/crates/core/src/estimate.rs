use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::matrix::{check_spd, symmetrize};

/// Mean and SPD covariance over an ordered list of state labels.
///
/// Label order is fixed at construction; every matrix index refers to it.
/// Estimates with the same labels in a different order must be explicitly
/// [`reindexed`](GaussianEstimate::reindexed) before fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EstimateRecord", into = "EstimateRecord")]
pub struct GaussianEstimate {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    labels: Vec<String>,
}

/// On-disk form: `{"labels": [...], "mean": [...], "covariance": [[row], ...]}`.
/// Missing labels default to `x0, x1, …`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRecord {
    #[serde(default)]
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) || labels.len() != d {
            return Err(FusionError::DimensionMismatch(format!(
                "mean has {d} entries, covariance is {:?}, {} labels",
                covariance.shape(),
                labels.len()
            )));
        }
        check_spd(&covariance, "covariance")?;
        Ok(Self { mean, covariance, labels })
    }

    /// Labels `x0, x1, ...`.
    pub fn with_default_labels(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let labels = default_labels(mean.len());
        Self::new(mean, covariance, labels)
    }

    /// Skips the eigenvalue check; the covariance is only symmetrized.
    /// For filter internals that maintain SPD covariances themselves.
    pub fn new_unchecked(mean: DVector<f64>, covariance: DMatrix<f64>, labels: Vec<String>) -> Self {
        debug_assert_eq!(mean.len(), labels.len());
        debug_assert_eq!(covariance.shape(), (mean.len(), mean.len()));
        Self { mean, covariance: symmetrize(&covariance), labels }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>, Vec<String>) {
        (self.mean, self.covariance, self.labels)
    }

    /// Same estimate with components permuted into `labels` order.
    pub fn reindexed(&self, labels: &[String]) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(FusionError::LabelMismatch(format!(
                "{} labels requested for a {}-dimensional estimate",
                labels.len(),
                self.dim()
            )));
        }
        let perm = labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| FusionError::LabelMismatch(format!("unknown label {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = DVector::from_iterator(perm.len(), perm.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(perm.len(), perm.len(), |i, j| self.covariance[(perm[i], perm[j])]);
        Ok(Self { mean, covariance: cov, labels: labels.to_vec() })
    }

    /// Error unless both estimates carry identical labels in identical order.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(FusionError::DimensionMismatch(format!(
                "estimates have dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.labels != other.labels {
            return Err(FusionError::LabelMismatch(
                "estimates use different label orders; reindex one of them first".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serialization")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| FusionError::Format(e.to_string()))
    }
}

pub fn default_labels(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(FusionError::Format(format!("{what}: row {bad} has a different length")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl TryFrom<EstimateRecord> for GaussianEstimate {
    type Error = FusionError;
    fn try_from(r: EstimateRecord) -> Result<Self> {
        let cov = rows_to_matrix(&r.covariance, "covariance")?;
        let labels = if r.labels.is_empty() { default_labels(r.mean.len()) } else { r.labels };
        Self::new(DVector::from_vec(r.mean), cov, labels)
    }
}

impl From<GaussianEstimate> for EstimateRecord {
    fn from(e: GaussianEstimate) -> Self {
        EstimateRecord {
            labels: e.labels,
            mean: e.mean.iter().copied().collect(),
            covariance: matrix_to_rows(&e.covariance),
        }
    }
}
