use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to name the failing
/// operation and the offending shapes, rows, or values.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {}x{}, right is {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid tensor dimensions: {reason}")]
    InvalidDims { reason: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("power({exponent}) of negative entry {value} at ({row}, {col})")]
    NegativeBase {
        exponent: f64,
        value: f64,
        row: usize,
        col: usize,
    },

    #[error("unsupported norm order p={p}; expected 2 or 4")]
    UnsupportedNormOrder { p: u32 },

    #[error("{op}: inputs are attached to different tapes")]
    TapeMismatch { op: &'static str },

    #[error("backward requires a scalar 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("backward requires a tape-attached loss tensor")]
    DetachedLoss,

    #[error("parameter {name} has no gradient; run backward first")]
    MissingGrad { name: String },

    #[error("invalid row slice {start}..{end} of {rows} rows")]
    BadSlice {
        start: usize,
        end: usize,
        rows: usize,
    },

    #[error("{op} requires a batch of at least {min} rows, got {rows}")]
    BatchTooSmall {
        op: &'static str,
        min: usize,
        rows: usize,
    },

    #[error("label {label} at row {row} out of range 0..{num_classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("inconsistent model spec: {reason}")]
    InconsistentSpec { reason: String },

    #[error("{op} requires a multi-head model")]
    NotMultiHead { op: &'static str },

    #[error("model has no RBF layer")]
    NoRbfLayer,

    #[error("unknown parameter {name}")]
    UnknownParam { name: String },

    #[error("optimizer state tracks {expected} parameters, step received {got}")]
    ParamCountMismatch { expected: usize, got: usize },

    #[error("csv header missing column {name:?} at position {position}")]
    MissingColumn { name: String, position: usize },

    #[error("csv row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv row {row}: unknown label {got:?}; valid labels are {valid:?}")]
    UnknownLabel {
        row: usize,
        got: String,
        valid: [&'static str; 6],
    },

    #[error("csv row {row} has {got} fields, expected {expected}")]
    BadFieldCount {
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("folds must be 1, 10, or 100, got {folds}")]
    InvalidFolds { folds: usize },

    #[error("epsilon list must not be empty")]
    EmptyEpsilons,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
