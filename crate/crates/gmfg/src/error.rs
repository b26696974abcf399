use thiserror::Error;

/// Errors shared across the solver, simulator and orchestration layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("nondegeneracy violation: {0}")]
    Nondegeneracy(String),

    #[error("maximizer ambiguity: {0}")]
    MaximizerAmbiguity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("numerical blow-up: {0}")]
    BlowUp(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("oscillation detected after {iterations} iterations (residual {residual:.3e}); try a smaller damping factor than {damping}")]
    Oscillation {
        iterations: usize,
        residual: f64,
        damping: f64,
    },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("unknown model: {0}")]
    UnknownModel(String),

    #[error("unknown graphon family: {0}")]
    UnknownGraphon(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
