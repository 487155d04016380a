use thiserror::Error;

/// Errors raised across the score-oracle, encoder and fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("quadratic form of node {node} vanished (value {value:e}); score is undefined there")]
    SingularQuadraticForm { node: usize, value: f64 },

    #[error("decoder Jacobian is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficientJacobian { sigma_min: f64 },

    #[error("decoder matrix is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficientDecoder { sigma_min: f64 },

    #[error("encoder matrix is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficientEncoder { sigma_min: f64 },

    #[error("encoder lost row rank at step {step} (smallest singular value {sigma_min:e})")]
    RankCollapse { step: usize, sigma_min: f64 },

    #[error("observation coordinate {index} = {value} is outside the open interval (-1, 1)")]
    DomainViolation { index: usize, value: f64 },

    #[error("no permutation puts a non-zero entry on every diagonal position")]
    NoPerfectMatching,

    #[error("coupling search over {n}! permutations exceeds the guard n <= {guard}")]
    BudgetExceeded { n: usize, guard: usize },

    #[error("gradient check failed: relative error {rel_error:e}")]
    GradientMismatch { rel_error: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in result files and CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::SingularQuadraticForm { .. } => "singular_quadratic_form",
            Error::RankDeficientJacobian { .. } => "rank_deficient_jacobian",
            Error::RankDeficientDecoder { .. } => "rank_deficient_decoder",
            Error::RankDeficientEncoder { .. } => "rank_deficient_encoder",
            Error::RankCollapse { .. } => "rank_collapse",
            Error::DomainViolation { .. } => "domain_violation",
            Error::NoPerfectMatching => "no_perfect_matching",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::GradientMismatch { .. } => "gradient_mismatch",
            Error::Shape(_) => "shape_mismatch",
            Error::Invalid(_) => "invalid_input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
