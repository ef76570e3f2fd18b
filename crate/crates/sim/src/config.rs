//! Scenario description, validation and built-in presets.
//!
//! Scenario files are TOML. Agent and target ids are one-based in files and
//! outputs; the simulator works with zero-based indices internally.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use nmci::BlockPartition;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::filter::StateLayout;
use crate::model::AgentConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest state dimension for which the SDP method is accepted.
pub const SDP_MAX_DIM: usize = 8;

pub const PRESETS: [&str; 3] = ["desk", "full", "sdp_pair"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Single filter over every agent's measurements.
    Centralized,
    /// Local filtering only.
    None,
    #[serde(alias = "CI")]
    Ci,
    #[serde(alias = "nmCI")]
    Nmci,
    #[serde(alias = "SDP")]
    Sdp,
}

impl Method {
    pub fn is_decentralized(self) -> bool {
        self != Method::Centralized
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Centralized => "centralized",
            Method::None => "none",
            Method::Ci => "CI",
            Method::Nmci => "nmCI",
            Method::Sdp => "SDP",
        })
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centralized" => Ok(Method::Centralized),
            "none" => Ok(Method::None),
            "ci" => Ok(Method::Ci),
            "nmci" => Ok(Method::Nmci),
            "sdp" => Ok(Method::Sdp),
            _ => Err(SimError::Config(format!(
                "unknown method '{s}' (expected centralized, none, ci, nmci or sdp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dynamics {
    /// Step length in seconds.
    pub dt: f64,
    /// White-noise acceleration intensity in m²/s³.
    pub q: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { dt: 1.0, q: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Covariance of relative target position measurements, m².
    pub target: [[f64; 2]; 2],
    /// Covariance of landmark (bias) measurements, m².
    pub landmark: [[f64; 2]; 2],
    /// Biases are drawn once per run uniformly in `[-bias_max, bias_max]` m.
    pub bias_max: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { target: [[1.0, 0.0], [0.0, 1.0]], landmark: [[0.25, 0.0], [0.0, 0.25]], bias_max: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub position_var: f64,
    pub velocity_var: f64,
    pub bias_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { position_var: 100.0, velocity_var: 25.0, bias_var: 4.0 }
    }
}

/// Block structure handed to nmCI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Two blocks per group: x-axis states and y-axis states of the group's
    /// targets and agent biases.
    #[default]
    GroupAxis,
    /// Two blocks per group: the group's targets and the group's biases.
    GroupTargetsBiases,
    /// One block per group.
    Group,
    /// One block per state variable.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exchange {
    /// Both endpoints of an edge adopt the fused belief.
    #[default]
    Symmetric,
    /// Only the second endpoint of an edge adopts the fused belief.
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub partition: PartitionScheme,
    pub exchange: Exchange,
    /// Cross-covariance samples per SDP fusion.
    pub sdp_samples: usize,
    /// Relative duality-gap tolerance of the SDP solver.
    pub sdp_tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { partition: PartitionScheme::GroupAxis, exchange: Exchange::Symmetric, sdp_samples: 200, sdp_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub n_agents: usize,
    pub n_targets: usize,
    /// Agent ids of each group.
    pub groups: Vec<Vec<usize>>,
    /// Undirected edges as agent id pairs, fused in this order every step.
    pub edges: Vec<[usize; 2]>,
    /// Target ids observed by each agent, in agent id order.
    pub assignments: Vec<Vec<usize>>,
    pub n_steps: usize,
    pub mc_runs: usize,
    pub seed: u64,
    /// Agent id whose estimates enter the summary statistics.
    #[serde(default = "default_observer")]
    pub observer: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
}

fn default_observer() -> usize {
    1
}

fn default_methods() -> Vec<Method> {
    vec![Method::Centralized, Method::Ci, Method::Nmci]
}

fn matrix2(rows: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
}

fn is_spd2(m: &Matrix2<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * m.norm() && m[(0, 0)] > 0.0 && m.determinant() > 0.0
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "full" => Some(Self::full()),
            "sdp_pair" => Some(Self::sdp_pair()),
            _ => None,
        }
    }

    /// 4 agents in 2 groups on a 4-cycle, one target per agent (24 states).
    pub fn desk() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "desk".into(),
            n_agents: 4,
            n_targets: 4,
            groups: vec![vec![1, 2], vec![3, 4]],
            edges: vec![[1, 2], [2, 3], [3, 4], [4, 1]],
            assignments: vec![vec![1], vec![2], vec![3], vec![4]],
            n_steps: 100,
            mc_runs: 15,
            seed: 1,
            observer: 1,
            methods: default_methods(),
            dynamics: Dynamics::default(),
            noise: NoiseConfig::default(),
            prior: PriorConfig::default(),
            fusion: FusionConfig::default(),
        }
    }

    /// 16 agents in 4 groups of 4, 20 targets in 4 groups of 5 (112 states).
    ///
    /// Each group is a 4-cycle; bridges 4-5, 7-11 and 12-13 join the
    /// groups. Agent `i` of a group watches targets `i` and `i+1` of the
    /// group's five.
    pub fn full() -> Self {
        let mut groups = Vec::new();
        let mut edges = Vec::new();
        let mut assignments = Vec::new();
        for g in 0..4 {
            let first = 4 * g + 1;
            groups.push((first..first + 4).collect());
            for i in 0..4 {
                edges.push([first + i, first + (i + 1) % 4]);
                let target = 5 * g + i + 1;
                assignments.push(vec![target, target + 1]);
            }
        }
        edges.extend([[4, 5], [7, 11], [12, 13]]);
        Self {
            schema_version: SCHEMA_VERSION,
            name: "full".into(),
            n_agents: 16,
            n_targets: 20,
            groups,
            edges,
            assignments,
            n_steps: 100,
            mc_runs: 2,
            seed: 1,
            observer: 7,
            methods: default_methods(),
            dynamics: Dynamics::default(),
            noise: NoiseConfig::default(),
            prior: PriorConfig::default(),
            fusion: FusionConfig::default(),
        }
    }

    /// Two agents sharing one target (8 states), small enough for SDP fusion.
    pub fn sdp_pair() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "sdp_pair".into(),
            n_agents: 2,
            n_targets: 1,
            groups: vec![vec![1, 2]],
            edges: vec![[1, 2]],
            assignments: vec![vec![1], vec![1]],
            n_steps: 20,
            mc_runs: 3,
            seed: 1,
            observer: 1,
            methods: vec![Method::Centralized, Method::Ci, Method::Sdp],
            dynamics: Dynamics::default(),
            noise: NoiseConfig::default(),
            prior: PriorConfig::default(),
            fusion: FusionConfig { partition: PartitionScheme::State, sdp_samples: 20, ..FusionConfig::default() },
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { n_targets: self.n_targets, n_agents: self.n_agents }
    }

    pub fn state_dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn target_noise(&self) -> Matrix2<f64> {
        matrix2(&self.noise.target)
    }

    pub fn landmark_noise(&self) -> Matrix2<f64> {
        matrix2(&self.noise.landmark)
    }

    /// Zero-based neighbor indices of agent `index`, in edge order.
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &[a, b] in &self.edges {
            let other = if a == index + 1 {
                b
            } else if b == index + 1 {
                a
            } else {
                continue;
            };
            if !out.contains(&(other - 1)) {
                out.push(other - 1);
            }
        }
        out
    }

    /// Zero-based edges.
    pub fn edge_indices(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&[a, b]| (a - 1, b - 1)).collect()
    }

    /// Zero-based agent indices of each group.
    pub fn group_agents(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.iter().map(|a| a - 1).collect()).collect()
    }

    /// Zero-based target indices watched by each group, ascending.
    pub fn group_targets(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| {
                let set: BTreeSet<usize> = g.iter().flat_map(|&a| self.assignments[a - 1].iter().map(|t| t - 1)).collect();
                set.into_iter().collect()
            })
            .collect()
    }

    pub fn agents(&self, biases: &[Vector2<f64>]) -> Vec<AgentConfig> {
        (0..self.n_agents)
            .map(|i| AgentConfig {
                index: i,
                bias: biases[i],
                assigned_targets: self.assignments[i].iter().map(|t| t - 1).collect(),
                neighbors: self.neighbors(i),
                meas_noise_target: self.target_noise(),
                meas_noise_landmark: self.landmark_noise(),
            })
            .collect()
    }

    /// Partition of the global state used by nmCI.
    pub fn partition(&self) -> BlockPartition {
        let layout = self.layout();
        if self.fusion.partition == PartitionScheme::State {
            return BlockPartition::singletons(layout.dim());
        }
        let mut blocks = Vec::new();
        for (agents, targets) in self.group_agents().iter().zip(self.group_targets()) {
            let target_axis = |axis: usize| -> Vec<usize> {
                targets.iter().flat_map(|&t| [layout.target(t) + 2 * axis, layout.target(t) + 2 * axis + 1]).collect()
            };
            let bias_axis = |axis: usize| -> Vec<usize> { agents.iter().map(|&a| layout.bias(a) + axis).collect() };
            match self.fusion.partition {
                PartitionScheme::GroupAxis => {
                    for axis in 0..2 {
                        let mut block = target_axis(axis);
                        block.extend(bias_axis(axis));
                        blocks.push(block);
                    }
                }
                PartitionScheme::GroupTargetsBiases => {
                    blocks.push(targets.iter().flat_map(|&t| layout.target(t)..layout.target(t) + 4).collect());
                    blocks.push(agents.iter().flat_map(|&a| layout.bias(a)..layout.bias(a) + 2).collect());
                }
                PartitionScheme::State => unreachable!("handled above"),
                PartitionScheme::Group => {
                    let mut block: Vec<usize> = targets.iter().flat_map(|&t| layout.target(t)..layout.target(t) + 4).collect();
                    block.extend(agents.iter().flat_map(|&a| layout.bias(a)..layout.bias(a) + 2));
                    blocks.push(block);
                }
            }
        }
        BlockPartition::new(blocks).expect("validated scenario yields a partition")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.n_agents == 0 || self.n_targets == 0 {
            return fail("n_agents and n_targets must be positive".into());
        }
        if self.n_steps == 0 || self.mc_runs == 0 {
            return fail("n_steps and mc_runs must be positive".into());
        }
        let agent_ok = |id: usize| (1..=self.n_agents).contains(&id);

        let mut seen = vec![false; self.n_agents];
        for (g, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return fail(format!("groups[{g}] is empty"));
            }
            for &id in group {
                if !agent_ok(id) {
                    return fail(format!("groups[{g}] names agent {id}, outside 1..={}", self.n_agents));
                }
                if std::mem::replace(&mut seen[id - 1], true) {
                    return fail(format!("agent {id} appears in more than one group"));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return fail(format!("agent {} belongs to no group", missing + 1));
        }

        if self.assignments.len() != self.n_agents {
            return fail(format!("assignments has {} entries for {} agents", self.assignments.len(), self.n_agents));
        }
        for (i, targets) in self.assignments.iter().enumerate() {
            if targets.is_empty() {
                return fail(format!("assignments[{i}]: agent {} watches no target", i + 1));
            }
            if let Some(t) = targets.iter().find(|t| !(1..=self.n_targets).contains(*t)) {
                return fail(format!("assignments[{i}] names target {t}, outside 1..={}", self.n_targets));
            }
        }
        let mut owner = vec![None; self.n_targets];
        for (g, targets) in self.group_targets().iter().enumerate() {
            for &t in targets {
                if let Some(other) = owner[t].replace(g) {
                    return fail(format!("target {} is watched by groups {} and {}; group targets must be exclusive", t + 1, other + 1, g + 1));
                }
            }
        }
        if let Some(t) = owner.iter().position(Option::is_none) {
            return fail(format!("target {} is watched by no agent", t + 1));
        }

        let mut edge_set = BTreeSet::new();
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            if !agent_ok(a) || !agent_ok(b) {
                return fail(format!("edges[{e}] = [{a}, {b}] names an unknown agent"));
            }
            if a == b {
                return fail(format!("edges[{e}] is a self-loop on agent {a}"));
            }
            if !edge_set.insert((a.min(b), a.max(b))) {
                return fail(format!("edges[{e}] = [{a}, {b}] is listed twice"));
            }
        }
        if !agent_ok(self.observer) {
            return fail(format!("observer {} is not an agent id", self.observer));
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }

        let d = self.dynamics;
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return fail(format!("dynamics.dt must be positive, got {}", d.dt));
        }
        if !(d.q >= 0.0 && d.q.is_finite()) {
            return fail(format!("dynamics.q must be nonnegative, got {}", d.q));
        }
        if !is_spd2(&self.target_noise()) {
            return fail("noise.target must be a symmetric positive definite 2x2 matrix".into());
        }
        if !is_spd2(&self.landmark_noise()) {
            return fail("noise.landmark must be a symmetric positive definite 2x2 matrix".into());
        }
        if !(self.noise.bias_max >= 0.0 && self.noise.bias_max.is_finite()) {
            return fail(format!("noise.bias_max must be nonnegative, got {}", self.noise.bias_max));
        }
        let p = self.prior;
        for (name, v) in [("position_var", p.position_var), ("velocity_var", p.velocity_var), ("bias_var", p.bias_var)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("prior.{name} must be positive, got {v}"));
            }
        }
        if self.methods.contains(&Method::Sdp) {
            if self.state_dim() > SDP_MAX_DIM {
                return fail(format!(
                    "method sdp supports state dimension <= {SDP_MAX_DIM}; this scenario has {}",
                    self.state_dim()
                ));
            }
            if self.fusion.sdp_samples == 0 {
                return fail("fusion.sdp_samples must be positive".into());
            }
            if !(self.fusion.sdp_tol > 0.0) {
                return fail("fusion.sdp_tol must be positive".into());
            }
        }
        Ok(())
    }
}
