//! Decentralized multi-agent, multi-target tracking with conservative
//! fusion.
//!
//! Agents run Kalman filters over the global state (all targets and all
//! agent biases), exchange beliefs with their neighbors, and fuse them with
//! CI, nmCI or the sampled SDP bound. A centralized filter serves as the
//! consistency reference.

pub mod config;
pub mod error;
pub mod filter;
pub mod model;
pub mod network;
pub mod runner;

pub use config::{Exchange, FusionConfig, Method, PartitionScheme, ScenarioConfig, PRESETS};
pub use error::{Result, SimError};
pub use filter::{local_filter_step, update, AgentBelief, MotionModel, Observation, StateLayout};
pub use model::{measure, propagate_truth, AgentConfig, AgentMeasurements, TargetState};
pub use network::{fuse_pair, fusion_round, EdgeFusion};
pub use runner::{
    run_method, run_once, simulate, summarize, MethodSummary, MethodTrace, RunOutput, RunRecord, Simulation,
    StepMetrics, TrackingReport, CENTRAL_ID,
};
