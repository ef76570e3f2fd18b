//! Independence structure: block partitions of the state and the induced
//! known-zero pattern of the cross-covariance.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::matrix::{assemble_joint, check_spd, min_eigenvalue, SPD_EIG_FLOOR};

/// Disjoint, non-empty index blocks covering `0..dim`. Blocks are mutually
/// independent state groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    owner: Vec<usize>,
}

impl BlockPartition {
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let dim: usize = blocks.iter().map(Vec::len).sum();
        let mut owner = vec![usize::MAX; dim];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(FusionError::InvalidPartition(format!("block {b} is empty")));
            }
            for &i in block {
                if i >= dim {
                    return Err(FusionError::InvalidPartition(format!(
                        "index {i} in block {b} outside 0..{dim}"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(FusionError::InvalidPartition(format!(
                        "index {i} appears in blocks {} and {b}",
                        owner[i]
                    )));
                }
                owner[i] = b;
            }
        }
        Ok(Self { blocks, owner })
    }

    /// One block holding every index (monolithic CI).
    pub fn single(dim: usize) -> Self {
        Self::new(vec![(0..dim).collect()]).expect("trivial partition")
    }

    /// One block per index.
    pub fn singletons(dim: usize) -> Self {
        Self::new((0..dim).map(|i| vec![i]).collect()).expect("trivial partition")
    }

    pub fn dim(&self) -> usize {
        self.owner.len()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.owner[i]
    }

    /// Largest cross-block entry of `p`, normalized by `sqrt(p_ii p_jj)`.
    pub fn cross_block_magnitude(&self, p: &DMatrix<f64>) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                if self.owner[i] != self.owner[j] && p[(i, j)] != 0.0 {
                    let scale = (p[(i, i)] * p[(j, j)]).abs().sqrt();
                    let rel = if scale > 0.0 { p[(i, j)].abs() / scale } else { f64::INFINITY };
                    worst = worst.max(rel);
                }
            }
        }
        worst
    }

    /// Zero every cross-block entry.
    pub fn project(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
            if self.owner[i] == self.owner[j] {
                p[(i, j)]
            } else {
                0.0
            }
        })
    }
}

impl TryFrom<Vec<Vec<usize>>> for BlockPartition {
    type Error = FusionError;
    fn try_from(blocks: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(blocks)
    }
}

impl From<BlockPartition> for Vec<Vec<usize>> {
    fn from(p: BlockPartition) -> Self {
        p.blocks
    }
}

/// `"0,1;2"` → `[[0, 1], [2]]`.
impl FromStr for BlockPartition {
    type Err = FusionError;
    fn from_str(s: &str) -> Result<Self> {
        let blocks = s
            .split(';')
            .map(|block| {
                block
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<usize>().map_err(|_| {
                            FusionError::InvalidPartition(format!("cannot parse index {t:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

impl fmt::Display for BlockPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| b.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Index set of cross-covariance entries known to be zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatternRecord", into = "PatternRecord")]
pub struct CrossSparsityPattern {
    dim_a: usize,
    dim_b: usize,
    zeros: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternRecord {
    dim_a: usize,
    dim_b: usize,
    zero_indices: Vec<(usize, usize)>,
}

impl TryFrom<PatternRecord> for CrossSparsityPattern {
    type Error = FusionError;
    fn try_from(r: PatternRecord) -> Result<Self> {
        Self::new(r.dim_a, r.dim_b, r.zero_indices)
    }
}

impl From<CrossSparsityPattern> for PatternRecord {
    fn from(p: CrossSparsityPattern) -> Self {
        PatternRecord {
            dim_a: p.dim_a,
            dim_b: p.dim_b,
            zero_indices: p.zeros.into_iter().collect(),
        }
    }
}

impl CrossSparsityPattern {
    pub fn new(
        dim_a: usize,
        dim_b: usize,
        zeros: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let zeros: BTreeSet<_> = zeros.into_iter().collect();
        if let Some(&(i, j)) = zeros.iter().find(|(i, j)| *i >= dim_a || *j >= dim_b) {
            return Err(FusionError::InvalidPattern(format!(
                "index ({i}, {j}) outside {dim_a}x{dim_b}"
            )));
        }
        Ok(Self { dim_a, dim_b, zeros })
    }

    /// Cross-covariance fully unknown.
    pub fn unknown(dim: usize) -> Self {
        Self { dim_a: dim, dim_b: dim, zeros: BTreeSet::new() }
    }

    /// Cross-covariance known to vanish.
    pub fn all_zero(dim: usize) -> Self {
        let zeros = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).collect();
        Self { dim_a: dim, dim_b: dim, zeros }
    }

    /// Entries pairing different blocks are zero.
    pub fn from_partition(partition: &BlockPartition) -> Self {
        let d = partition.dim();
        let zeros = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| partition.block_of(i) != partition.block_of(j))
            .collect();
        Self { dim_a: d, dim_b: d, zeros }
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn zero_indices(&self) -> &BTreeSet<(usize, usize)> {
        &self.zeros
    }

    pub fn is_zero(&self, i: usize, j: usize) -> bool {
        self.zeros.contains(&(i, j))
    }

    /// Entries not fixed to zero, row-major.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        (0..self.dim_a)
            .flat_map(|i| (0..self.dim_b).map(move |j| (i, j)))
            .filter(|e| !self.zeros.contains(e))
            .collect()
    }

    /// Coarsest partition whose cross-block entries are all known zeros.
    /// Requires a square pattern.
    pub fn coarsest_partition(&self) -> Result<BlockPartition> {
        if self.dim_a != self.dim_b {
            return Err(FusionError::InvalidPattern(format!(
                "partition needs a square pattern, got {}x{}",
                self.dim_a, self.dim_b
            )));
        }
        let d = self.dim_a;
        let mut coupling = DMatrix::<f64>::zeros(d, d);
        for (i, j) in self.free_entries() {
            if i != j {
                coupling[(i, j)] = 1.0;
            }
        }
        BlockPartition::new(crate::matrix::coupled_components(&[&coupling]))
    }

    /// Coarsest partition that is consistent with the pattern and along
    /// which both marginals are block-diagonal (entries below `rel_tol`
    /// relative to `sqrt(p_ii p_jj)` count as zero). Across its blocks the
    /// two estimates are jointly independent.
    pub fn independence_partition(&self, p_a: &DMatrix<f64>, p_b: &DMatrix<f64>, rel_tol: f64) -> Result<BlockPartition> {
        let base = self.coarsest_partition()?;
        let d = base.dim();
        if p_a.shape() != (d, d) || p_b.shape() != (d, d) {
            return Err(FusionError::DimensionMismatch(format!(
                "pattern is {d}x{d}, marginals are {:?} and {:?}",
                p_a.shape(),
                p_b.shape()
            )));
        }
        let mut coupling = DMatrix::<f64>::zeros(d, d);
        for block in base.blocks() {
            for w in block.windows(2) {
                coupling[(w[0], w[1])] = 1.0;
            }
        }
        for p in [p_a, p_b] {
            for i in 0..d {
                for j in 0..d {
                    if i != j && p[(i, j)].abs() > rel_tol * (p[(i, i)] * p[(j, j)]).abs().sqrt() {
                        coupling[(i, j)] = 1.0;
                    }
                }
            }
        }
        BlockPartition::new(crate::matrix::coupled_components(&[&coupling]))
    }

    pub fn check_matrix(&self, p_ab: &DMatrix<f64>) -> bool {
        p_ab.shape() == (self.dim_a, self.dim_b)
            && self.zeros.iter().all(|&(i, j)| p_ab[(i, j)] == 0.0)
    }
}

/// Joint covariance `[[P_a, P_ab], [P_abᵀ, P_b]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub p_a: DMatrix<f64>,
    pub p_b: DMatrix<f64>,
    pub p_ab: DMatrix<f64>,
}

impl JointCovariance {
    pub fn new(p_a: DMatrix<f64>, p_b: DMatrix<f64>, p_ab: DMatrix<f64>) -> Result<Self> {
        if !p_a.is_square() || !p_b.is_square() || p_ab.shape() != (p_a.nrows(), p_b.nrows()) {
            return Err(FusionError::DimensionMismatch(format!(
                "joint blocks {:?}, {:?}, cross {:?}",
                p_a.shape(),
                p_b.shape(),
                p_ab.shape()
            )));
        }
        Ok(Self { p_a, p_b, p_ab })
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        assemble_joint(&self.p_a, &self.p_b, &self.p_ab)
    }

    pub fn check_pd(&self) -> Result<()> {
        check_spd(&self.assemble(), "joint covariance")
    }

    /// Positive definite and zero on every known-zero index.
    pub fn in_uncertainty_set(&self, pattern: &CrossSparsityPattern) -> bool {
        if !pattern.check_matrix(&self.p_ab) {
            return false;
        }
        let joint = self.assemble();
        let ev = crate::matrix::sym_eigenvalues(&joint);
        let max = ev[ev.len() - 1];
        max > 0.0 && min_eigenvalue(&joint) > SPD_EIG_FLOOR * max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn partition_examples() {
        let p = BlockPartition::new(vec![vec![0], vec![1]]).unwrap();
        assert_eq!(CrossSparsityPattern::from_partition(&p).zero_indices(), &set(&[(0, 1), (1, 0)]));

        let p = BlockPartition::single(2);
        assert!(CrossSparsityPattern::from_partition(&p).zero_indices().is_empty());

        let p = BlockPartition::new(vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(
            CrossSparsityPattern::from_partition(&p).zero_indices(),
            &set(&[(0, 2), (1, 2), (2, 0), (2, 1)])
        );
    }

    #[test]
    fn invalid_partitions() {
        assert!(BlockPartition::new(vec![vec![0], vec![]]).is_err());
        assert!(BlockPartition::new(vec![vec![0, 1], vec![1]]).is_err());
        assert!(BlockPartition::new(vec![vec![0, 3], vec![1]]).is_err());
    }

    #[test]
    fn parse_and_display() {
        let p: BlockPartition = "0, 2; 1".parse().unwrap();
        assert_eq!(p.blocks(), &[vec![0, 2], vec![1]]);
        assert_eq!(p.to_string(), "0,2;1");
        assert!("0;x".parse::<BlockPartition>().is_err());
    }

    #[test]
    fn pattern_range_checked() {
        assert!(CrossSparsityPattern::new(2, 2, [(2, 0)]).is_err());
        assert!(CrossSparsityPattern::new(2, 3, [(1, 2)]).is_ok());
    }

    #[test]
    fn coarsest_partition_recovers_blocks() {
        let p = BlockPartition::new(vec![vec![0, 2], vec![1], vec![3, 4]]).unwrap();
        let pattern = CrossSparsityPattern::from_partition(&p);
        assert_eq!(pattern.coarsest_partition().unwrap(), p);
        assert_eq!(CrossSparsityPattern::all_zero(3).coarsest_partition().unwrap(), BlockPartition::singletons(3));
    }

    #[test]
    fn uncertainty_set_membership() {
        let pattern = CrossSparsityPattern::from_partition(&BlockPartition::singletons(2));
        let i2 = DMatrix::identity(2, 2);
        let ok = JointCovariance::new(i2.clone(), i2.clone(), DMatrix::from_diagonal_element(2, 2, 0.5)).unwrap();
        assert!(ok.in_uncertainty_set(&pattern));
        let off = JointCovariance::new(i2.clone(), i2.clone(), DMatrix::from_element(2, 2, 0.1)).unwrap();
        assert!(!off.in_uncertainty_set(&pattern));
        let not_pd = JointCovariance::new(i2.clone(), i2, DMatrix::from_diagonal_element(2, 2, 1.0)).unwrap();
        assert!(!not_pd.in_uncertainty_set(&pattern));
    }

    #[test]
    fn pattern_json_roundtrip() {
        let pattern = CrossSparsityPattern::new(2, 2, [(0, 1), (1, 0)]).unwrap();
        let s = serde_json::to_string(&pattern).unwrap();
        assert_eq!(serde_json::from_str::<CrossSparsityPattern>(&s).unwrap(), pattern);
        assert!(serde_json::from_str::<CrossSparsityPattern>(r#"{"dim_a":1,"dim_b":1,"zero_indices":[[3,0]]}"#).is_err());
    }
}
