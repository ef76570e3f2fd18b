#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nmci::{BlockPartition, GaussianEstimate};
use rand::Rng;

/// `L Lᵀ + floor·I` from `n²` entries.
pub fn spd_from(entries: &[f64], n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_row_slice(n, n, &entries[..n * n]);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.5..1.5)).collect();
    spd_from(&entries, n, 0.1)
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

pub fn estimate(mean: &[f64], cov: DMatrix<f64>) -> GaussianEstimate {
    GaussianEstimate::with_default_labels(DVector::from_row_slice(mean), cov).unwrap()
}

pub fn zero_estimate(cov: DMatrix<f64>) -> GaussianEstimate {
    let d = cov.nrows();
    GaussianEstimate::with_default_labels(DVector::zeros(d), cov).unwrap()
}

/// Partition from a block label per index; labels need not be contiguous.
pub fn partition_from_labels(labels: &[usize]) -> BlockPartition {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        blocks.push(labels.iter().enumerate().filter(|(_, l)| **l == id).map(|(i, _)| i).collect());
    }
    BlockPartition::new(blocks).unwrap()
}

/// Split a `2d × 2d` joint into `(P_a, P_b, P_ab)`.
pub fn split_joint(joint: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = joint.nrows() / 2;
    (
        joint.view((0, 0), (d, d)).into_owned(),
        joint.view((d, d), (d, d)).into_owned(),
        joint.view((0, d), (d, d)).into_owned(),
    )
}

/// Joint covariance that is block-diagonal in both marginals and the cross
/// term with respect to `partition`; each block's `2k × 2k` joint is built
/// from consecutive chunks of `entries`.
pub fn block_joint(partition: &BlockPartition, entries: &[f64]) -> DMatrix<f64> {
    let d = partition.dim();
    let mut joint = DMatrix::zeros(2 * d, 2 * d);
    let mut offset = 0;
    for block in partition.blocks() {
        let k = block.len();
        let local = spd_from(&entries[offset..], 2 * k, 0.05);
        offset += 4 * k * k;
        let global: Vec<usize> = block.iter().copied().chain(block.iter().map(|i| i + d)).collect();
        for (r, &gr) in global.iter().enumerate() {
            for (c, &gc) in global.iter().enumerate() {
                joint[(gr, gc)] = local[(r, c)];
            }
        }
    }
    joint
}

/// SPD matrix with eigenvalues bounded away from zero, so correlations stay
/// moderate and rejection sampling of full cross blocks stays cheap.
pub fn moderate_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    spd_from(&entries, n, 1.0)
}
