//! Monte Carlo driver.
//!
//! Every run draws its truth, biases and measurements once from named
//! streams of the master seed; every method then filters the same record.

use nalgebra::{DVector, Vector2};
use nmci::eval::{average_series, chi2_band, mean, nees_parts, two_sigma, McStatistics, OmegaRecord};
use nmci::rng::{stream_rng, Stream, StreamRng};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Method, ScenarioConfig};
use crate::error::{Result, SimError};
use crate::filter::{local_filter_step, AgentBelief, MotionModel, Observation, StateLayout};
use crate::model::{measure, propagate_truth, AgentConfig, AgentMeasurements, TargetState};
use crate::network::{fusion_round, EdgeFusion};

/// Agent id reported for the centralized filter.
pub const CENTRAL_ID: usize = 0;

/// Confidence level of the NEES band.
pub const NEES_LEVEL: f64 = 0.95;

/// Shared random realization of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub biases: Vec<Vector2<f64>>,
    /// Target states at steps `0..=n_steps`.
    pub targets: Vec<Vec<TargetState>>,
    /// Measurements of every agent at steps `1..=n_steps` (entry `k-1`).
    pub measurements: Vec<Vec<AgentMeasurements>>,
}

impl RunRecord {
    pub fn generate(config: &ScenarioConfig, run: usize) -> Self {
        let index = run as u64;
        let mut bias_rng = stream_rng(config.seed, Stream::Bias, index);
        let b = config.noise.bias_max;
        let biases: Vec<Vector2<f64>> = (0..config.n_agents)
            .map(|_| Vector2::new(bias_rng.random_range(-b..=b), bias_rng.random_range(-b..=b)))
            .collect();

        let mut init_rng = stream_rng(config.seed, Stream::Initial, index);
        let (sp, sv) = (config.prior.position_var.sqrt(), config.prior.velocity_var.sqrt());
        let mut draw = |s: f64| -> f64 { s * init_rng.sample::<f64, _>(StandardNormal) };
        let initial: Vec<TargetState> =
            (0..config.n_targets).map(|_| TargetState::new(draw(sp), draw(sv), draw(sp), draw(sv))).collect();

        let mut truth_rng = stream_rng(config.seed, Stream::Truth, index);
        let mut meas_rng = stream_rng(config.seed, Stream::Measurement, index);
        let agents = config.agents(&biases);
        let mut targets = Vec::with_capacity(config.n_steps + 1);
        let mut measurements = Vec::with_capacity(config.n_steps);
        targets.push(initial);
        for _ in 0..config.n_steps {
            let prev = targets.last().expect("initial state present");
            let next: Vec<TargetState> = prev
                .iter()
                .map(|s| propagate_truth(s, config.dynamics.dt, config.dynamics.q, &mut truth_rng))
                .collect();
            measurements.push(agents.iter().map(|a| measure(a, &next, &mut meas_rng)).collect());
            targets.push(next);
        }
        Self { run, biases, targets, measurements }
    }

    /// Global truth vector at `step`.
    pub fn truth(&self, layout: &StateLayout, step: usize) -> DVector<f64> {
        layout.truth_vector(&self.targets[step], &self.biases)
    }
}

/// Step-by-step execution of one method on one run record.
pub struct Simulation<'a> {
    config: &'a ScenarioConfig,
    record: &'a RunRecord,
    method: Method,
    model: MotionModel,
    agents: Vec<AgentConfig>,
    edges: Vec<(usize, usize)>,
    beliefs: Vec<AgentBelief>,
    step: usize,
    sampler: StreamRng,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a ScenarioConfig, record: &'a RunRecord, method: Method) -> Self {
        let layout = config.layout();
        let prior = AgentBelief { estimate: layout.prior(&config.prior), partition: config.partition() };
        let copies = if method == Method::Centralized { 1 } else { config.n_agents };
        Self {
            config,
            record,
            method,
            model: MotionModel { layout, dynamics: config.dynamics },
            agents: config.agents(&record.biases),
            edges: config.edge_indices(),
            beliefs: vec![prior; copies],
            step: 0,
            sampler: stream_rng(config.seed, Stream::Sampler, record.run as u64),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn beliefs(&self) -> &[AgentBelief] {
        &self.beliefs
    }

    /// One-based agent id of each belief, [`CENTRAL_ID`] for the
    /// centralized filter.
    pub fn belief_ids(&self) -> Vec<usize> {
        if self.method == Method::Centralized {
            vec![CENTRAL_ID]
        } else {
            (1..=self.beliefs.len()).collect()
        }
    }

    /// Advance one step: predict, update with the step's measurements, and
    /// run the fusion round.
    pub fn step(&mut self) -> Result<Vec<EdgeFusion>> {
        if self.step >= self.config.n_steps {
            return Err(SimError::Config(format!("run has only {} steps", self.config.n_steps)));
        }
        let step = self.step + 1;
        let meas = &self.record.measurements[step - 1];
        let layout = self.model.layout;
        let observations: Vec<Observation> =
            self.agents.iter().zip(meas).map(|(a, m)| Observation::for_agent(&layout, a, m)).collect();
        if self.method == Method::Centralized {
            let all = Observation::stack(&observations);
            self.beliefs[0] = local_filter_step(&self.beliefs[0], Some(&all), &self.model)
                .map_err(|reason| SimError::Filter { step, agent: CENTRAL_ID, reason })?;
        } else {
            for (i, obs) in observations.iter().enumerate() {
                self.beliefs[i] = local_filter_step(&self.beliefs[i], Some(obs), &self.model)
                    .map_err(|reason| SimError::Filter { step, agent: i + 1, reason })?;
            }
        }
        let log = if self.method == Method::Centralized {
            Vec::new()
        } else {
            fusion_round(&mut self.beliefs, &self.edges, self.method, &self.config.fusion, step, &mut self.sampler)?
        };
        self.step = step;
        Ok(log)
    }
}

/// Per-step, per-agent error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    /// One-based agent id, [`CENTRAL_ID`] for the centralized filter.
    pub agent: usize,
    /// NEES over the full global state.
    pub nees: f64,
    /// Squared position error `‖p̂ − p‖²`, averaged over targets.
    pub sq_pos_err: f64,
    /// Average 2σ of the target positions.
    pub two_sigma: f64,
    pub trace: f64,
}

/// Mean and marginal variances of one belief at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub agent: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodTrace {
    pub method: Method,
    pub metrics: Vec<StepMetrics>,
    pub snapshots: Vec<Snapshot>,
    pub omega: Vec<OmegaRecord>,
    /// Largest cross-block entry removed by lenient nmCI over the run.
    pub max_projection: f64,
}

impl MethodTrace {
    /// Metrics of one agent in step order.
    pub fn agent_metrics(&self, agent: usize) -> Vec<StepMetrics> {
        self.metrics.iter().filter(|m| m.agent == agent).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub run: usize,
    pub record: RunRecord,
    pub methods: Vec<MethodTrace>,
}

fn metrics_for(layout: &StateLayout, belief: &AgentBelief, truth: &DVector<f64>, step: usize, agent: usize) -> Result<StepMetrics> {
    let est = &belief.estimate;
    let nees = nees_parts(est.mean(), est.covariance(), truth)
        .map_err(|e| SimError::Filter { step, agent, reason: e.to_string() })?;
    let sq_pos_err = (0..layout.n_targets)
        .map(|t| {
            let i = layout.target(t);
            (est.mean()[i] - truth[i]).powi(2) + (est.mean()[i + 2] - truth[i + 2]).powi(2)
        })
        .sum::<f64>()
        / layout.n_targets as f64;
    Ok(StepMetrics {
        step,
        agent,
        nees,
        sq_pos_err,
        two_sigma: two_sigma(est.covariance(), &layout.position_indices()),
        trace: est.covariance().trace(),
    })
}

/// Run `method` over every step of `record`.
pub fn run_method(config: &ScenarioConfig, record: &RunRecord, method: Method, keep_snapshots: bool) -> Result<MethodTrace> {
    let layout = config.layout();
    let mut sim = Simulation::new(config, record, method);
    let ids = sim.belief_ids();
    let mut trace = MethodTrace { method, metrics: Vec::new(), snapshots: Vec::new(), omega: Vec::new(), max_projection: 0.0 };
    for step in 1..=config.n_steps {
        for fused in sim.step()? {
            if let Some(p) = fused.projected {
                trace.max_projection = trace.max_projection.max(p);
            }
            if let Some(weights) = fused.omega {
                trace.omega.push(OmegaRecord { run: record.run, step, agent_a: fused.a + 1, agent_b: fused.b + 1, weights });
            }
        }
        let truth = record.truth(&layout, step);
        for (belief, &id) in sim.beliefs().iter().zip(&ids) {
            trace.metrics.push(metrics_for(&layout, belief, &truth, step, id)?);
            if keep_snapshots {
                let est = &belief.estimate;
                trace.snapshots.push(Snapshot {
                    step,
                    agent: id,
                    mean: est.mean().iter().copied().collect(),
                    variance: est.covariance().diagonal().iter().copied().collect(),
                });
            }
        }
    }
    Ok(trace)
}

pub fn run_once(config: &ScenarioConfig, run: usize, keep_snapshots: bool) -> Result<RunOutput> {
    let record = RunRecord::generate(config, run);
    let methods = config
        .methods
        .iter()
        .map(|&m| run_method(config, &record, m, keep_snapshots))
        .collect::<Result<_>>()?;
    Ok(RunOutput { run, record, methods })
}

/// Monte Carlo aggregates of one method, evaluated for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Agent whose estimates are summarized; [`CENTRAL_ID`] for the
    /// centralized filter.
    pub agent: usize,
    pub dof: usize,
    pub stats: McStatistics,
    /// Mean NEES over the steady-state window.
    pub steady_nees: f64,
    /// Mean covariance trace over runs and the steady-state window.
    pub steady_trace: f64,
    /// Per-run RMSE averaged over runs and over every agent.
    pub network_rmse_mean: f64,
    /// Smallest in-band fraction of the run-averaged NEES over all agents.
    pub network_fraction_consistent: f64,
    pub max_projection: f64,
}

impl MethodSummary {
    pub fn fraction_consistent(&self) -> f64 {
        self.stats.fraction_consistent()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub state_dim: usize,
    pub runs: Vec<RunOutput>,
    pub summaries: Vec<MethodSummary>,
}

impl TrackingReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// First step of the steady-state window (the last quarter of the run).
pub fn steady_state_start(n_steps: usize) -> usize {
    n_steps - (n_steps / 4).max(1) + 1
}

fn per_run<F: Fn(&StepMetrics) -> f64>(runs: &[RunOutput], k: usize, agent: usize, f: F) -> Vec<Vec<f64>> {
    runs.iter().map(|r| r.methods[k].agent_metrics(agent).iter().map(&f).collect()).collect()
}

pub fn summarize(config: &ScenarioConfig, runs: &[RunOutput]) -> Result<Vec<MethodSummary>> {
    let dof = config.state_dim();
    let band = chi2_band(dof, runs.len(), NEES_LEVEL)?;
    let start = steady_state_start(config.n_steps) - 1;
    let rmse_of = |series: &[f64]| mean(series).sqrt();
    config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let agents: Vec<usize> = if method == Method::Centralized { vec![CENTRAL_ID] } else { (1..=config.n_agents).collect() };
            let agent = if method == Method::Centralized { CENTRAL_ID } else { config.observer };
            let nees_series = average_series(&per_run(runs, k, agent, |m| m.nees));
            let rmse_runs: Vec<f64> = per_run(runs, k, agent, |m| m.sq_pos_err).iter().map(|s| rmse_of(s)).collect();
            let sigma: Vec<f64> = per_run(runs, k, agent, |m| m.two_sigma).concat();
            let traces = average_series(&per_run(runs, k, agent, |m| m.trace));
            let stats = McStatistics {
                chi2_bounds: band,
                rmse_mean: mean(&rmse_runs),
                sigma2_mean: mean(&sigma),
                omega_log: runs.iter().flat_map(|r| r.methods[k].omega.iter().cloned()).collect(),
                conservativeness: Vec::new(),
                nees_series,
            };
            let network_rmse: Vec<f64> = agents
                .iter()
                .flat_map(|&a| per_run(runs, k, a, |m| m.sq_pos_err).into_iter().map(|s| rmse_of(&s)))
                .collect();
            let network_fraction_consistent = agents
                .iter()
                .map(|&a| nmci::eval::fraction_inside(&average_series(&per_run(runs, k, a, |m| m.nees)), &band))
                .fold(1.0, f64::min);
            Ok(MethodSummary {
                method,
                agent,
                dof,
                steady_nees: mean(&stats.nees_series[start..]),
                steady_trace: mean(&traces[start..]),
                stats,
                network_rmse_mean: mean(&network_rmse),
                network_fraction_consistent,
                max_projection: runs.iter().map(|r| r.methods[k].max_projection).fold(0.0, f64::max),
            })
        })
        .collect()
}

/// Run every Monte Carlo run (in parallel on the current rayon pool) and
/// summarize. Results are ordered by run index regardless of scheduling.
pub fn simulate(config: &ScenarioConfig, keep_snapshots: bool) -> Result<TrackingReport> {
    config.validate()?;
    let runs: Vec<RunOutput> =
        (0..config.mc_runs).into_par_iter().map(|r| run_once(config, r, keep_snapshots)).collect::<Result<_>>()?;
    let summaries = summarize(config, &runs)?;
    Ok(TrackingReport { state_dim: config.state_dim(), runs, summaries })
}
