use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Every message starts with the variant name so that command-line
/// diagnostics can be matched on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("CapacityExceeded: {len} values do not fit in {capacity} slots")]
    CapacityExceeded { len: usize, capacity: usize },

    #[error("EmptyPlaintext: a plaintext vector needs at least one value")]
    EmptyPlaintext,

    #[error("KeyMismatch: ciphertext key {found} does not match context key {expected}")]
    KeyMismatch { expected: String, found: String },

    #[error("CapacityMismatch: operands have {left} and {right} slots")]
    CapacityMismatch { left: usize, right: usize },

    #[error("DepthExceeded: operation needs depth {required}, budget is {budget}")]
    DepthExceeded { required: u32, budget: u32 },

    #[error("BroadcastMismatch: plaintext of length {len} cannot broadcast over {capacity} slots")]
    BroadcastMismatch { len: usize, capacity: usize },

    #[error("InvalidContext: {0}")]
    InvalidContext(String),

    #[error("InvalidParams: {0}")]
    InvalidParams(String),

    #[error("InfeasibleParams: c_range {c_range} admits fewer than {m} distinct nonzero coefficients")]
    InfeasibleParams { m: usize, c_range: i64 },

    #[error("InputTooShort: input has {len} elements, window needs {m}")]
    InputTooShort { len: usize, m: usize },

    #[error("IllConditioned: {0}")]
    IllConditioned(String),

    #[error("ZeroVector: cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("DimensionMismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("DomainViolation: scaled denominator {value} outside approximation domain [{lo}, {hi}]")]
    DomainViolation { value: f64, lo: f64, hi: f64 },

    #[error("ZeroPrefix: the first {dim} coordinates are all zero")]
    ZeroPrefix { dim: usize },

    #[error("EmptyGallery: identification needs at least one enrolled record")]
    EmptyGallery,

    #[error("UnknownParamsId: no parameters stored under {0}")]
    UnknownParamsId(String),

    #[error("DegenerateLabels: training data contains a single class")]
    DegenerateLabels,

    #[error("ZeroBaseline: suppression rate is undefined when the unprotected accuracy is 0")]
    ZeroBaseline,

    #[error("PipelineOrder: {0}")]
    PipelineOrder(String),

    #[error("Malformed: {0}")]
    Malformed(String),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),

    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("Csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
