mod common;

use common::*;
use nalgebra::DMatrix;
use nmci::matrix::{assemble_joint, sym_eigenvalues};
use nmci::rng::seeded;
use nmci::sampler::CrossSampler;
use nmci::{partition_to_sparsity, sample_cross, sample_set, CrossSparsityPattern};
use proptest::prelude::*;
use rand::distr::{Distribution, Uniform};

#[test]
fn scalar_draws_reach_both_ends_of_the_interval() {
    let one = DMatrix::identity(1, 1);
    let samples = sample_set(&one, &one, &CrossSparsityPattern::unknown(1), 10_000, 99).unwrap();
    let values: Vec<f64> = samples.iter().map(|s| s.p_ab[(0, 0)]).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo <= -0.99 && lo > -1.0, "min {lo}");
    assert!((0.99..1.0).contains(&hi), "max {hi}");
}

#[test]
fn identical_seeds_give_identical_sequences() {
    let one = DMatrix::identity(1, 1);
    let pattern = CrossSparsityPattern::unknown(1);
    let first = sample_set(&one, &one, &pattern, 100, 5).unwrap();
    let second = sample_set(&one, &one, &pattern, 100, 5).unwrap();
    assert_eq!(first, second);
    let other = sample_set(&one, &one, &pattern, 100, 6).unwrap();
    assert_ne!(first, other);

    let pa = diag(&[3.0, 1.0]);
    let pb = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let pattern = CrossSparsityPattern::unknown(2);
    let long = sample_set(&pa, &pb, &pattern, 50, 17).unwrap();
    let short = sample_set(&pa, &pb, &pattern, 20, 17).unwrap();
    assert_eq!(&long[..20], &short[..]);
    for (x, y) in long.iter().zip(sample_set(&pa, &pb, &pattern, 50, 17).unwrap()) {
        assert_eq!(x.p_ab.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   y.p_ab.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

/// With identity marginals a proposal is admissible iff `σ_max(C_ab) < 1`.
/// The proposal stream is replayed here from the documented generator and
/// each proposal is classified by an eigensolver, then compared with what
/// the sampler accepted and rejected.
#[test]
fn identity_marginals_accept_by_singular_value() {
    let i2 = DMatrix::identity(2, 2);
    let pattern = CrossSparsityPattern::unknown(2);
    let seed = 314;
    let mut sampler = CrossSampler::new(&i2, &i2, &pattern, seed).unwrap();
    let mut replay = seeded(seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0).unwrap();
    let mut proposals = 0u64;
    let (mut accepted, mut rejected) = (0, 0);
    while proposals < 10_000 {
        let sample = sampler.draw().unwrap();
        for attempt in 1..=sample.attempts {
            // Free entries are filled in row-major order.
            let mut c = DMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    c[(i, j)] = unit.sample(&mut replay);
                }
            }
            let sigma_max = sym_eigenvalues(&(c.transpose() * &c)).max().sqrt();
            if attempt == sample.attempts {
                assert!(sigma_max < 1.0, "accepted proposal with σ_max {sigma_max}");
                assert_eq!(c, sample.p_ab);
                accepted += 1;
            } else {
                assert!(sigma_max >= 1.0 - 1e-8, "rejected proposal with σ_max {sigma_max}");
                rejected += 1;
            }
        }
        proposals += sample.attempts;
    }
    assert!(accepted > 100 && rejected > 100, "{accepted} accepted, {rejected} rejected");
}

#[test]
fn comparison_setup_respects_scalar_bounds() {
    let pa = diag(&[3.0, 1.0]);
    let pb = diag(&[1.0, 4.0]);
    let pattern = partition_to_sparsity(&nmci::BlockPartition::singletons(2));
    for s in sample_set(&pa, &pb, &pattern, 1000, 8).unwrap() {
        assert_eq!(s.p_ab[(0, 1)], 0.0);
        assert_eq!(s.p_ab[(1, 0)], 0.0);
        assert!(s.p_ab[(0, 0)].abs() < 3f64.sqrt());
        assert!(s.p_ab[(1, 1)].abs() < 2.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn samples_lie_in_the_uncertainty_set(
        d in 1usize..=3,
        ea in prop::collection::vec(-2.0..2.0f64, 9),
        eb in prop::collection::vec(-2.0..2.0f64, 9),
        zeros in prop::collection::vec(any::<bool>(), 9),
        seed in any::<u64>(),
    ) {
        let pa = spd_from(&ea, d, 0.2);
        let pb = spd_from(&eb, d, 0.2);
        let idx: Vec<(usize, usize)> = (0..d * d).filter(|k| zeros[*k]).map(|k| (k / d, k % d)).collect();
        let pattern = CrossSparsityPattern::new(d, d, idx.iter().copied()).unwrap();
        let s = sample_cross(&pa, &pb, &pattern, seed).unwrap();
        for &(i, j) in &idx {
            prop_assert_eq!(s.p_ab[(i, j)], 0.0);
        }
        let eig = sym_eigenvalues(&assemble_joint(&pa, &pb, &s.p_ab));
        prop_assert!(eig.min() > 1e-10 * eig.max());
        prop_assert!(s.attempts >= 1);
    }
}
