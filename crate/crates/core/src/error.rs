use thiserror::Error;

/// Errors raised by the learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("recommended action {action} of agent {agent} has zero marginal mass in state {state}")]
    ZeroMarginal {
        state: usize,
        agent: usize,
        action: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("inertia constant {mu} too small: diagonal of row {row} would be {diagonal}")]
    InertiaTooSmall { mu: f64, row: usize, diagonal: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(&'static str),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("malformed tables: {0}")]
    MalformedTables(String),

    #[error("instance too large for exhaustive enumeration: {size} exceeds cap {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("transition matrix is reducible")]
    Reducible,

    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("summaries are not comparable: {0}")]
    MismatchedConfigs(String),

    #[error("unknown quantity {0:?}")]
    UnknownQuantity(String),

    #[error("metrics file: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
