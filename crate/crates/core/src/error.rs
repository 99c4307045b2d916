use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} outside the admissible domain {domain}")]
    Domain { value: f64, domain: String },

    #[error("argument {value} outside the tabulated range [{min}, {max}]")]
    Range { value: f64, min: f64, max: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported scaling regime (kappa = {kappa}, lambda = {lambda}): {reason}")]
    UnsupportedRegime {
        kappa: f64,
        lambda: f64,
        reason: String,
    },

    #[error("singular linear system at step {step}, iteration {iteration}")]
    Singular { step: usize, iteration: usize },

    #[error("non-finite head at step {step}, iteration {iteration}")]
    NonFinite { step: usize, iteration: usize },

    #[error("Picard iteration did not converge at step {step} after {} iterations (last update {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { step: usize, history: Vec<f64> },

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors raised while solving, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::NonFinite { .. } | Error::NonConvergence { .. }
        )
    }
}
