use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("region X_{index} is empty")]
    RegionEmpty { index: usize },

    #[error("pair (A, b) is not controllable (singular value ratio {ratio:.3e})")]
    Uncontrollable { ratio: f64 },

    #[error("output vector violates the relative-degree conditions: {0}")]
    InvalidOutputVector(String),

    #[error("matrix is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("beta*g changes sign inside X_{index} (witnesses {positive:?} and {negative:?})")]
    SignAmbiguous {
        index: usize,
        positive: Vec<f64>,
        negative: Vec<f64>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Riccati iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("maximal admissible set not finitely determined within {max_steps} steps")]
    NoFiniteDetermination { max_steps: usize },

    #[error("no positive ellipsoid level satisfies the terminal constraints")]
    NoPositiveLevel,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("horizon mismatch: expected {expected}, got {got}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("solver hit its iteration limit on scenario {sequence:?}")]
    SolverIterLimit { sequence: Vec<usize> },

    #[error("no feasible constraint scenario for the current state{}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    InfeasibleState { step: Option<usize> },

    #[error("catalog hash mismatch: stored {stored}, expected {expected}")]
    CatalogMismatch { stored: String, expected: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::RegionEmpty { .. } => "REGION_EMPTY",
            Error::Uncontrollable { .. } => "UNCONTROLLABLE",
            Error::InvalidOutputVector(_) => "INVALID_OUTPUT_VECTOR",
            Error::IllConditioned { .. } => "ILL_CONDITIONED",
            Error::SignAmbiguous { .. } => "SIGN_AMBIGUOUS",
            Error::Precondition(_) => "PRECONDITION",
            Error::NoConvergence { .. } => "NO_CONVERGENCE",
            Error::NoFiniteDetermination { .. } => "NO_FINITE_DETERMINATION",
            Error::NoPositiveLevel => "NO_POSITIVE_LEVEL",
            Error::OutOfRange(_) => "OUT_OF_RANGE",
            Error::HorizonMismatch { .. } => "HORIZON_MISMATCH",
            Error::SolverIterLimit { .. } => "ITER_LIMIT",
            Error::InfeasibleState { .. } => "INFEASIBLE_STATE",
            Error::CatalogMismatch { .. } => "CATALOG_MISMATCH",
            Error::Schema(_) => "SCHEMA",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }
}
