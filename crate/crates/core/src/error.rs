use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid target distribution in row {row}: sum {sum}")]
    InvalidTarget { row: usize, sum: f64 },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(alloc::vec::Vec<usize>),
    #[error("invalid model sizes: {0}")]
    InvalidSizes(String),
    #[error("parameter registry mismatch: {0}")]
    Registry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no iterates collected")]
    NoIterates,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input")]
    Empty,
    #[error("step {step} failed: {source}")]
    AtStep { step: u64, source: alloc::boxed::Box<Error> },
    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
