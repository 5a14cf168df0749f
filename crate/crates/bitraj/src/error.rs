use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHermitian { max_asymmetry: f64, tolerance: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("outcome {outcome} is not in the outcome set of observable `{observable}`")]
    UnknownOutcome { observable: String, outcome: f64 },
    #[error("observable `{0}` is not fine-grained")]
    NotFineGrained(String),
    #[error("resolution cells do not match observable `{observable}`: {reason}")]
    CellMismatch { observable: String, reason: String },
    #[error("outcome sequence has length {got}, schedule expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("conditioning event probability {probability:.3e} is at or below the floor {floor:.1e}")]
    ZeroConditioningEvent { probability: f64, floor: f64 },
    #[error("table would store {required} pairs, exceeding the cap of {cap}")]
    EnumerationCapExceeded { required: u128, cap: u128 },
    #[error("position {position} is out of range (valid {min}..={max})")]
    PositionOutOfRange { position: usize, min: usize, max: usize },
    #[error("Gram operator is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("Gram operator trace {trace} deviates from 1 beyond tolerance")]
    TraceDeviation { trace: f64 },
    #[error("factorization check requires zero coupling, got lambda = {0}")]
    CouplingNonzero(f64),
    #[error("index split is not a disjoint cover of 1..={n}")]
    BadSplit { n: usize },
    #[error("path sum would enumerate {required} paths, exceeding the cap of {cap}")]
    PathCapExceeded { required: u128, cap: u128 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("reference-basis index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("config error at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("initialization weights sum to {sum}, expected 1")]
    WeightSumError { sum: f64 },
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
