use nalgebra::{DMatrix, DVector, Vector2};
use nmci::{BlockPartition, GaussianEstimate};
use nmci_sim::config::{Dynamics, PriorConfig};
use nmci_sim::filter::{local_filter_step, update, AgentBelief, MotionModel, Observation, StateLayout};
use nmci_sim::model::{AgentConfig, AgentMeasurements};
use proptest::prelude::*;

fn spd(entries: &[f64], n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()]);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

fn model(n_targets: usize, n_agents: usize) -> MotionModel {
    MotionModel { layout: StateLayout { n_targets, n_agents }, dynamics: Dynamics { dt: 1.0, q: 0.01 } }
}

fn belief(layout: &StateLayout) -> AgentBelief {
    AgentBelief { estimate: layout.prior(&PriorConfig::default()), partition: BlockPartition::single(layout.dim()) }
}

fn agent(assigned: Vec<usize>) -> AgentConfig {
    AgentConfig {
        index: 0,
        bias: Vector2::zeros(),
        assigned_targets: assigned,
        neighbors: vec![],
        meas_noise_target: nalgebra::Matrix2::identity(),
        meas_noise_landmark: nalgebra::Matrix2::identity() * 0.25,
    }
}

/// Posterior by direct conditioning in information form.
fn conditioning_oracle(mean: &DVector<f64>, cov: &DMatrix<f64>, obs: &Observation) -> (DVector<f64>, DMatrix<f64>) {
    let prior_info = cov.clone().try_inverse().unwrap();
    let r_inv = obs.r.clone().try_inverse().unwrap();
    let post_cov = (&prior_info + obs.h.transpose() * &r_inv * &obs.h).try_inverse().unwrap();
    let post_mean = &post_cov * (&prior_info * mean + obs.h.transpose() * &r_inv * &obs.z);
    (post_mean, post_cov)
}

#[test]
fn prediction_only_inflates_position_uncertainty() {
    let m = model(2, 1);
    let mut b = belief(&m.layout);
    let positions = m.layout.position_indices();
    let pos_trace = |b: &AgentBelief| positions.iter().map(|&i| b.estimate.covariance()[(i, i)]).sum::<f64>();
    for _ in 0..20 {
        let next = local_filter_step(&b, None, &m).unwrap();
        assert!(pos_trace(&next) >= pos_trace(&b));
        b = next;
    }
}

#[test]
fn perfect_position_measurement() {
    let layout = StateLayout { n_targets: 1, n_agents: 1 };
    let b = belief(&layout);
    let mut h = DMatrix::zeros(2, layout.dim());
    h[(0, 0)] = 1.0;
    h[(1, 2)] = 1.0;
    let obs = Observation { z: DVector::from_vec(vec![3.0, -1.0]), h, r: DMatrix::identity(2, 2) * 1e-12 };
    let post = update(&b.estimate, &obs).unwrap();
    assert!(post.covariance()[(0, 0)] <= 1e-10);
    assert!(post.covariance()[(2, 2)] <= 1e-10);
    assert!((post.mean()[0] - 3.0).abs() < 1e-9);
}

#[test]
fn one_step_matches_batch_conditioning() {
    let m = model(2, 2);
    let layout = m.layout;
    let n = layout.dim();
    let entries: Vec<f64> = (0..n * n).map(|k| ((k * 37 % 23) as f64 / 23.0) - 0.5).collect();
    let cov = spd(&entries, n, 0.5);
    let mean = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin() * 5.0);
    let start = AgentBelief {
        estimate: GaussianEstimate::new(mean.clone(), cov.clone(), layout.labels()).unwrap(),
        partition: BlockPartition::single(n),
    };
    let mut a = agent(vec![0, 1]);
    a.index = 1;
    let meas = AgentMeasurements {
        targets: vec![(0, Vector2::new(1.5, -2.0)), (1, Vector2::new(0.3, 4.0))],
        landmark: Vector2::new(0.2, -0.4),
    };
    let obs = Observation::for_agent(&layout, &a, &meas);
    let post = local_filter_step(&start, Some(&obs), &m).unwrap();

    let f = m.transition_matrix();
    let pred_cov = &f * &cov * f.transpose() + m.process_noise_matrix();
    let (o_mean, o_cov) = conditioning_oracle(&(&f * &mean), &pred_cov, &obs);
    assert!((post.estimate.mean() - o_mean).amax() <= 1e-8);
    assert!((post.estimate.covariance() - o_cov).amax() <= 1e-8);
}

#[test]
fn observation_rows_couple_target_and_own_bias() {
    let layout = StateLayout { n_targets: 3, n_agents: 2 };
    let mut a = agent(vec![2]);
    a.index = 1;
    let meas = AgentMeasurements { targets: vec![(2, Vector2::new(1.0, 2.0))], landmark: Vector2::new(0.5, 0.6) };
    let obs = Observation::for_agent(&layout, &a, &meas);
    assert_eq!(obs.z.as_slice(), &[1.0, 2.0, 0.5, 0.6]);
    let ones: Vec<(usize, usize)> =
        (0..4).flat_map(|r| (0..layout.dim()).map(move |c| (r, c))).filter(|&(r, c)| obs.h[(r, c)] != 0.0).collect();
    let bx = layout.bias(1);
    assert_eq!(ones, vec![(0, 8), (0, bx), (1, 10), (1, bx + 1), (2, bx), (3, bx + 1)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn update_shrinks_covariance_and_stays_spd(e in prop::collection::vec(-1.0..1.0f64, 100), z in prop::collection::vec(-5.0..5.0f64, 4)) {
        let layout = StateLayout { n_targets: 1, n_agents: 3 };
        let n = layout.dim();
        let cov = spd(&e, n, 0.05);
        let prior = GaussianEstimate::new(DVector::zeros(n), cov.clone(), layout.labels()).unwrap();
        let mut a = agent(vec![0]);
        a.index = 2;
        let meas = AgentMeasurements { targets: vec![(0, Vector2::new(z[0], z[1]))], landmark: Vector2::new(z[2], z[3]) };
        let post = update(&prior, &Observation::for_agent(&layout, &a, &meas)).unwrap();
        prop_assert!(post.covariance().clone().cholesky().is_some());
        let shrink = nmci::matrix::min_eigenvalue(&(&cov - post.covariance()));
        prop_assert!(shrink >= -1e-9 * cov.norm());
    }
}
