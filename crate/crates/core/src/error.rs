use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty empirical measure")]
    EmptyMeasure,
    #[error("drift overflow")]
    DriftOverflow,
    #[error("blow-up at step {0}")]
    BlowUp(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time {t} outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },
    #[error("infeasible kernel order {order} for base `{base}`; try `{suggestion}`")]
    InfeasibleOrder {
        order: usize,
        base: &'static str,
        suggestion: &'static str,
    },
    #[error("unknown kernel id `{0}`")]
    UnknownKernel(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("inadmissible bandwidth grid: {0}")]
    InadmissibleGrid(String),
    #[error("boundary: shrink h1 or move t0")]
    Boundary,
    #[error("degenerate denominator")]
    DegenerateDenominator,
    #[error("degenerate linear form")]
    DegenerateLinearForm,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unsorted input")]
    Unsorted,
    #[error("too few replicates: need at least {needed}, got {got}")]
    TooFewReplicates { needed: usize, got: usize },
    #[error("malformed trajectory file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
