use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid padding: {0}")]
    InvalidPadding(String),
    #[error("kernel of size {kernel} does not fit padded length {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },
    #[error("invalid probability {0}: must lie in [0, 1)")]
    InvalidProbability(f64),
    #[error("{channels} channels cannot be split into {groups} groups")]
    Grouping { channels: usize, groups: usize },
    #[error("batch statistics need at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("index {index} out of range (limit {limit}) in {what}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("graph was already consumed by a previous backward pass")]
    StaleGraph,
    #[error("tensor does not require grad and has no graph")]
    NotDifferentiable,
    #[error("optimizer state mismatch for `{name}`: {reason}")]
    StateMismatch { name: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid value for `{key}`: {value} (allowed: {allowed})")]
    Validation {
        key: String,
        value: String,
        allowed: String,
    },
    #[error("horizon {horizon} needs sequences longer than {horizon} steps, got {steps}")]
    Horizon { horizon: usize, steps: usize },
    #[error("contrastive batch needs at least 2 windows, got {0}")]
    BatchTooSmall(usize),
    #[error("requested {requested} negatives but only {available} candidates exist")]
    InsufficientNegatives { requested: usize, available: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("timestamps not increasing for subject `{subject}` at row {row}")]
    Ordering { subject: String, row: usize },
    #[error("cannot parse `{field}` at row {row}: {value}")]
    Parse {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("cannot decimate {from} Hz to {to} Hz by an integer factor")]
    ResampleRatio { from: f64, to: f64 },
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("fold error: {0}")]
    Fold(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
