mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nmci::eval::{chi2_band, conservativeness_sweep, nees, rmse, two_sigma};
use nmci::special::chi2_quantile;
use nmci::{exact_fuse, partition_to_sparsity, BlockPartition, CrossSparsityPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn quantiles_agree_with_reference_implementation() {
    for &dof in &[1.0, 2.0, 3.0, 4.0, 24.0, 60.0, 360.0, 1680.0] {
        let reference = ChiSquared::new(dof).unwrap();
        for &p in &[0.001, 0.025, 0.1, 0.5, 0.9, 0.975, 0.999] {
            let ours = chi2_quantile(dof, p);
            let theirs = reference.inverse_cdf(p);
            assert!((ours - theirs).abs() <= 1e-8 * theirs.max(1.0), "dof={dof} p={p}: {ours} vs {theirs}");
        }
    }
}

#[test]
fn two_dof_single_run_band() {
    let band = chi2_band(2, 1, 0.95).unwrap();
    assert!((band.lower - 0.0506356).abs() < 1e-6, "{}", band.lower);
    assert!((band.upper - 7.377759).abs() < 1e-5, "{}", band.upper);
}

#[test]
fn band_brackets_dof_and_narrows_with_runs() {
    for dof in [1, 2, 4, 24] {
        let mut width = f64::INFINITY;
        for runs in [1, 2, 5, 15, 50, 200] {
            let band = chi2_band(dof, runs, 0.95).unwrap();
            let dof_f = dof as f64;
            assert!(band.lower < dof_f && dof_f < band.upper);
            let w = band.upper - band.lower;
            assert!(w < width, "dof={dof} runs={runs}");
            width = w;
        }
    }
    let wide = chi2_band(1, 1, 1.0 - 1e-12).unwrap();
    assert!(wide.lower < 1e-20 && wide.upper > 50.0);
    assert!(chi2_band(0, 1, 0.95).is_err());
    assert!(chi2_band(1, 1, 1.0).is_err());
}

/// Coverage of the band by scaled sums of squared standard normals.
#[test]
fn band_coverage_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 200_000;
    for (dof, runs) in [(1usize, 1usize), (2, 1), (4, 15), (24, 15)] {
        let band = chi2_band(dof, runs, 0.95).unwrap();
        let (mut below, mut above) = (0usize, 0usize);
        for _ in 0..draws {
            let sum: f64 = (0..dof * runs).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
            let avg = sum / runs as f64;
            if avg < band.lower {
                below += 1;
            } else if avg > band.upper {
                above += 1;
            }
        }
        let inside = 1.0 - (below + above) as f64 / draws as f64;
        assert!((inside - 0.95).abs() <= 0.01, "dof={dof} runs={runs}: coverage {inside}");
        assert!((below as f64 / draws as f64 - 0.025).abs() <= 0.005);
        assert!((above as f64 / draws as f64 - 0.025).abs() <= 0.005);
    }
}

#[test]
fn nees_examples() {
    let e = estimate(&[1.0, 2.0], DMatrix::identity(2, 2));
    assert_eq!(nees(&e, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 0.0);
    let e = estimate(&[3.0, 4.0], DMatrix::identity(2, 2));
    assert!((nees(&e, &DVector::zeros(2)).unwrap() - 25.0).abs() < 1e-12);
    let e = estimate(&[2.0], diag(&[4.0]));
    assert!((nees(&e, &DVector::zeros(1)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn nees_is_invariant_under_reparameterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..200 {
        let d = 1 + trial % 6;
        let cov = random_spd(&mut rng, d);
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let truth = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let t: DMatrix<f64> = DMatrix::from_fn(d, d, |i, j| rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 });
        if t.determinant().abs() < 1e-3 {
            continue;
        }
        let base = nees(&zero_mean(mean.clone(), cov.clone()), &truth).unwrap();
        let moved = nees(&zero_mean(&t * &mean, &t * &cov * t.transpose()), &(&t * &truth)).unwrap();
        assert!((base - moved).abs() <= 1e-8 * base.max(1.0), "trial {trial}: {base} vs {moved}");
    }
}

fn zero_mean(mean: DVector<f64>, cov: DMatrix<f64>) -> nmci::GaussianEstimate {
    let cov = (&cov + cov.transpose()) * 0.5;
    nmci::GaussianEstimate::with_default_labels(mean, cov).unwrap()
}

#[test]
fn rmse_examples() {
    let truth: Vec<DVector<f64>> = (0..5).map(|k| DVector::from_vec(vec![k as f64, -(k as f64)])).collect();
    assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
    let shifted: Vec<DVector<f64>> = truth.iter().map(|t| t + DVector::from_vec(vec![0.0, 2.0])).collect();
    assert!((rmse(&shifted, &truth).unwrap() - 2.0).abs() < 1e-12);
    let one = [DVector::from_vec(vec![3.0, 4.0])];
    assert!((rmse(&one, &[DVector::zeros(2)]).unwrap() - 5.0).abs() < 1e-12);
    assert!(rmse(&[], &[]).is_err());
    assert!((two_sigma(&diag(&[4.0, 9.0, 1.0]), &[0, 2]) - 2.0 * 2.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn sweep_with_all_zero_pattern_tracks_exact_fusion() {
    let pa = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
    let pb = diag(&[1.5, 3.0]);
    let report = conservativeness_sweep(&pa, &pb, &CrossSparsityPattern::all_zero(2), &[1, 10], 5, 3).unwrap();
    let a = zero_estimate(pa.clone());
    let b = zero_estimate(pb.clone());
    let exact = exact_fuse(&a, &b, &DMatrix::zeros(2, 2)).unwrap();
    let expected = nmci::matrix::sym_spectral_norm(&(&report.nmci_bound - &exact.bound));
    for run in &report.runs {
        assert!((run.deviation - expected).abs() < 1e-5, "{} vs {expected}", run.deviation);
        assert!(run.sdp_min_eig >= -1e-7);
        assert!(run.nmci_min_eig >= -1e-9);
    }
}

#[test]
fn sweep_on_comparison_setup() {
    let pa = diag(&[3.0, 1.0]);
    let pb = diag(&[1.0, 4.0]);
    let pattern = partition_to_sparsity(&BlockPartition::singletons(2));
    let report = conservativeness_sweep(&pa, &pb, &pattern, &[1, 10, 100], 40, 8).unwrap();
    assert!((&report.nmci_bound - diag(&[1.0, 1.0])).norm() < 1e-9);
    assert_eq!(report.nmci_omega, vec![0.0, 1.0]);
    for row in &report.rows {
        assert!(row.nmci_min_eig.min >= -1e-9);
        assert_eq!(row.nonoptimal, 0);
    }
    assert!(report.rows[0].sdp_min_eig.min < 0.0);
    let medians: Vec<f64> = report.rows.iter().map(|r| r.deviation.median).collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{medians:?}");
}
