use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate ray: point coincides with the ellipse center")]
    DegenerateRay,
    #[error("ellipse axes must be positive (a = {a}, b = {b})")]
    NonPositiveAxis { a: f64, b: f64 },
    #[error("non-finite geometry value")]
    NonFinite,
    #[error("timestamps must strictly increase ({next} after {last})")]
    NonMonotoneTime { last: f64, next: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalMapError {
    #[error("cell ({col}, {row}) has no full 3x3 neighborhood")]
    NoNeighborhood { col: usize, row: usize },
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("insufficient history: need at least 2 shapes, got {0}")]
    InsufficientHistory(usize),
    #[error("filter divergence: innovation covariance is not positive definite")]
    FilterDivergence,
    #[error("measurement variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("reference has {got} states, expected {expected}")]
    ReferenceLength { expected: usize, got: usize },
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown parameter override `{0}`")]
    UnknownOverride(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    LocalMap(#[from] LocalMapError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}
