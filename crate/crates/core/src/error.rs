use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid has no lines")]
    Empty,
    #[error("cycle detected through bus {bus}")]
    CycleDetected { bus: usize },
    #[error("bus {bus} has no line connecting it to the grid")]
    DisconnectedBus { bus: usize },
    #[error("bus {bus} appears as the child of more than one line")]
    DuplicateChild { bus: usize },
    #[error("bad bus index {bus}: {reason}")]
    BadIndex { bus: usize, reason: &'static str },
    #[error("line feeding bus {child} has invalid impedance r={r}, x={x} (need r > 0, x >= 0)")]
    InvalidImpedance { child: usize, r: f64, x: f64 },
    #[error("reduced incidence matrix is singular")]
    SingularIncidence,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("sweep did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-positive squared voltage at bus {bus} (voltage collapse)")]
    NonPositiveVoltage { bus: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("time slot {t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<PowerFlowError>,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("non-finite value at time {t}, bus {bus}")]
    NonFiniteInput { t: usize, bus: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty series")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("bus {bus}: {source}")]
    AtBus {
        bus: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentifyError {
    #[error("ground truth has no positives or no negatives")]
    DegenerateTruth,
    #[error("sample covariance is singular")]
    SingularCovariance,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}
