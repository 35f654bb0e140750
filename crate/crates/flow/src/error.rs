use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("agent {agent}: {reason}")]
    InvalidGrid { agent: usize, reason: String },

    #[error("instance has {count} profiles, above the cap of {cap}; use a coarser grid or raise max_profiles")]
    TooManyProfiles { count: u128, cap: usize },

    #[error("interim rule shape mismatch: {0}")]
    Shape(String),

    #[error("interim probability {value} for agent {agent}, type index {index} is outside [0, 1]")]
    OutOfRange { agent: usize, index: usize, value: f64 },

    #[error("profile {profile:?} does not index the type grids")]
    BadProfile { profile: Vec<usize> },

    #[error("at most {max} agents are supported, got {got}")]
    TooManyAgents { got: usize, max: usize },

    #[error("interim rule is infeasible (excess {excess:.3e}); no ex-post rule exists")]
    Infeasible { excess: f64 },

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;
