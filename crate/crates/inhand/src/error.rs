use thiserror::Error;

/// Errors surfaced by the library. Most numerical operations are total and
/// return values instead; errors here are contract or configuration failures.
#[derive(Debug, Error)]
pub enum InhandError {
    #[error("degenerate ray: point coincides with the object center")]
    DegenerateRay,

    #[error("config error: {0}")]
    Config(String),

    #[error("nominal grasp infeasible: initial-state acceptance rate below 1%")]
    GraspInfeasible,

    #[error("simulation fault: {0}")]
    SimFault(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate training: all environments terminated for 50 consecutive iterations")]
    DegenerateTraining,

    #[error("harvest yield below 1%: {got} successes out of {attempts} rollouts")]
    HarvestYield { got: usize, attempts: usize },

    #[error("distillation diverged: loss {loss} exceeds 10x initial {initial}")]
    DistillDiverged { loss: f64, initial: f64 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InhandError>;
