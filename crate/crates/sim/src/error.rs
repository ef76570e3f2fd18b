use nmci::FusionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("fusion on edge {edge} (agents {a}-{b}) failed at step {step}: {source}")]
    Fusion {
        step: usize,
        edge: usize,
        a: usize,
        b: usize,
        #[source]
        source: FusionError,
    },

    #[error("filter of agent {agent} failed at step {step}: {reason}")]
    Filter { step: usize, agent: usize, reason: String },

    #[error(transparent)]
    Core(#[from] FusionError),
}

pub type Result<T> = std::result::Result<T, SimError>;
