use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} is outside the active class set")]
    LabelOutsideMask { label: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("duplicate class id {0}")]
    DuplicateClass(usize),

    #[error("class counts do not divide: {0}")]
    IndivisibleClasses(String),

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("malformed data file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("fisher accumulator finalized without any batches")]
    NoBatches,

    #[error("negative fisher value {value} at coordinate {index}")]
    NegativeFisher { index: usize, value: f64 },

    #[error("task {0} already committed to the fisher ledger")]
    DuplicateCommit(usize),

    #[error("zero displacement between anchor and target")]
    ZeroDisplacement,

    #[error("basis directions are parallel")]
    ParallelDirections,

    #[error("evaluation failed at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task}: {source}")]
    InTask {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("matrix is not symmetric positive semi-definite: {0}")]
    NotPsd(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("stationarity residual {residual:e} exceeds {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_task(self, task: usize) -> Error {
        Error::InTask {
            task,
            source: Box::new(self),
        }
    }
}
