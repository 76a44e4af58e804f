use thiserror::Error;

/// Errors raised across the estimation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MermError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("derivative of order {requested} not supported (maximum {supported})")]
    UnsupportedOrder { requested: usize, supported: usize },

    #[error("finite-difference step underflow at x = {x} for derivative order {order}")]
    StepUnderflow { x: f64, order: usize },

    #[error("expansion order K = {0} is invalid; K must be >= 2")]
    InvalidOrder(usize),

    #[error("missing error moment for multi-index {0:?}")]
    MissingMoment(Vec<u32>),

    #[error("not enough moments: m = {moments} but {parameters} parameters (theta plus nuisance) must be estimated")]
    Underidentified { moments: usize, parameters: usize },

    #[error("rank deficiency in {0}")]
    RankDeficient(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("optimizer failed: {0}")]
    NoConvergence(String),

    #[error("J-test undefined: {0}")]
    JTestUndefined(String),

    #[error("all {0} replications failed")]
    AllReplicationsFailed(usize),

    #[error("unknown {kind}: {name}")]
    Unknown { kind: String, name: String },
}

pub type Result<T> = std::result::Result<T, MermError>;

impl MermError {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        MermError::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MermError::InvalidInput(msg.into())
    }

    /// True for failures that come from the numerics rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MermError::NonFinite { .. }
                | MermError::StepUnderflow { .. }
                | MermError::RankDeficient(_)
                | MermError::Singular(_)
                | MermError::NoConvergence(_)
                | MermError::AllReplicationsFailed(_)
        )
    }
}
