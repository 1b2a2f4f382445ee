use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FermError {
    #[error("argument {0} must be positive for this divergence")]
    NonPositiveArgument(f64),
    #[error("alpha parameter {0} is invalid (must be finite and not 0 or 1)")]
    InvalidAlphaParam(f64),
    #[error("{kind} is not differentiable")]
    NonDifferentiable { kind: &'static str },
    #[error("dual value {value} violates the {bound} bound of the conjugate domain")]
    OutOfDualDomain { value: f64, bound: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("p[{index}] = {p} > 0 while q[{index}] = 0")]
    AbsoluteContinuityViolation { index: usize, p: f64 },
    #[error("not a probability vector: {0}")]
    InvalidProbVector(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("group {0} has no samples")]
    EmptyGroup(usize),
    #[error("no samples of group {group} with label {label}")]
    EmptyConditionedSubset { group: usize, label: usize },
    #[error("non-finite parameter after update at step {step}")]
    NonFiniteUpdate { step: usize },
    #[error("the l-infinity robust objective supports only kl and chi2, not {0}")]
    UnsupportedDivergenceForLinf(String),
    #[error("sensitive attribute must be binary, found {0} groups")]
    NonBinaryGroup(usize),
    #[error("could not find a split keeping every group and label on both sides")]
    UnsatisfiableSplit,
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Encoding { row: usize, message: String },
    #[error("row {row}, column {column}: value {value:?} is not numeric")]
    NonNumericFeature {
        row: usize,
        column: String,
        value: String,
    },
    #[error("accuracy target {target} not reached within tolerance; closest was {best}")]
    TargetUnreachable { target: f64, best: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FermError {
    fn from(e: std::io::Error) -> Self {
        FermError::Io(e.to_string())
    }
}

impl From<csv::Error> for FermError {
    fn from(e: csv::Error) -> Self {
        FermError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FermError>;
