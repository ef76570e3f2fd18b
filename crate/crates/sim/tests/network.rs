use nalgebra::{DMatrix, DVector};
use nmci::GaussianEstimate;
use nmci_sim::config::{Exchange, FusionConfig, Method, ScenarioConfig};
use nmci_sim::filter::{local_filter_step, AgentBelief, MotionModel, Observation};
use nmci_sim::network::fusion_round;
use nmci_sim::runner::{RunRecord, Simulation};
use nmci_sim::SimError;
use nmci::rng::seeded;

/// Beliefs after `steps` full steps of `method`, then the local filter of
/// the next step, so that they are ready for a fusion round.
fn pre_fusion_beliefs(config: &ScenarioConfig, method: Method, steps: usize) -> Vec<AgentBelief> {
    let record = RunRecord::generate(config, 0);
    let mut sim = Simulation::new(config, &record, method);
    for _ in 0..steps {
        sim.step().unwrap();
    }
    let model = MotionModel { layout: config.layout(), dynamics: config.dynamics };
    let agents = config.agents(&record.biases);
    sim.beliefs()
        .iter()
        .zip(&agents)
        .zip(&record.measurements[steps])
        .map(|((b, a), m)| local_filter_step(b, Some(&Observation::for_agent(&model.layout, a, m)), &model).unwrap())
        .collect()
}

#[test]
fn method_none_leaves_beliefs_unchanged() {
    let config = ScenarioConfig::desk();
    let mut beliefs = pre_fusion_beliefs(&config, Method::Ci, 3);
    let before = beliefs.clone();
    let log = fusion_round(&mut beliefs, &config.edge_indices(), Method::None, &config.fusion, 4, &mut seeded(0)).unwrap();
    assert!(log.is_empty());
    assert_eq!(beliefs, before);
}

#[test]
fn identical_beliefs_are_unchanged_by_ci() {
    let config = ScenarioConfig::desk();
    let one = pre_fusion_beliefs(&config, Method::Ci, 5).remove(0);
    let mut beliefs = vec![one.clone(), one.clone()];
    fusion_round(&mut beliefs, &[(0, 1)], Method::Ci, &config.fusion, 6, &mut seeded(0)).unwrap();
    let scale = one.estimate.covariance().amax();
    for b in &beliefs {
        assert!((b.estimate.covariance() - one.estimate.covariance()).amax() <= 1e-9 * scale);
        assert!((b.estimate.mean() - one.estimate.mean()).amax() <= 1e-9);
    }
}

#[test]
fn nmci_round_never_increases_trace() {
    for config in [ScenarioConfig::full(), ScenarioConfig::desk()] {
        for steps in [0, 4, 20] {
            let mut beliefs = pre_fusion_beliefs(&config, Method::Nmci, steps);
            for (edge, &(a, b)) in config.edge_indices().iter().enumerate() {
                let before = [beliefs[a].estimate.covariance().trace(), beliefs[b].estimate.covariance().trace()];
                fusion_round(&mut beliefs, &[(a, b)], Method::Nmci, &config.fusion, steps + 1, &mut seeded(0)).unwrap();
                let after = beliefs[a].estimate.covariance().trace();
                assert!(after <= before[0] + 1e-9 && after <= before[1] + 1e-9, "{} edge {edge}: {after} vs {before:?}", config.name);
            }
        }
    }
}

#[test]
fn receiver_exchange_updates_one_endpoint() {
    let config = ScenarioConfig::desk();
    let mut beliefs = pre_fusion_beliefs(&config, Method::Ci, 2);
    let before = beliefs.clone();
    let settings = FusionConfig { exchange: Exchange::Receiver, ..config.fusion };
    fusion_round(&mut beliefs, &[(0, 1)], Method::Nmci, &settings, 3, &mut seeded(0)).unwrap();
    assert_eq!(beliefs[0], before[0]);
    assert_ne!(beliefs[1], before[1]);
}

#[test]
fn omega_logged_per_edge() {
    let config = ScenarioConfig::desk();
    let mut beliefs = pre_fusion_beliefs(&config, Method::Nmci, 2);
    let partition_len = beliefs[0].partition.len();
    let log = fusion_round(&mut beliefs, &config.edge_indices(), Method::Nmci, &config.fusion, 3, &mut seeded(0)).unwrap();
    assert_eq!(log.len(), config.edges.len());
    for (k, rec) in log.iter().enumerate() {
        assert_eq!(rec.edge, k);
        assert_eq!(rec.omega.as_ref().unwrap().len(), partition_len);
    }
}

#[test]
fn fusion_failure_names_the_edge() {
    let config = ScenarioConfig::desk();
    let mut beliefs = pre_fusion_beliefs(&config, Method::Ci, 1);
    let d = config.state_dim();
    beliefs[2].estimate = GaussianEstimate::new_unchecked(DVector::zeros(d), DMatrix::zeros(d, d), config.layout().labels());
    let err = fusion_round(&mut beliefs, &config.edge_indices(), Method::Ci, &config.fusion, 7, &mut seeded(0)).unwrap_err();
    match err {
        SimError::Fusion { step, edge, a, b, .. } => assert_eq!((step, edge, a, b), (7, 2, 2, 3)),
        other => panic!("unexpected error {other}"),
    }
}
