use thiserror::Error;

/// Errors raised across model construction, the intervention calculus,
/// simulation, inference and the experiment harness.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CegError {
    #[error("cycle detected or vertex unreachable from root: {0}")]
    CycleDetected(String),
    #[error("vertex {0} has more than one parent")]
    MultipleParents(String),
    #[error("thetas out of vertex {vertex} sum to {sum}")]
    ThetaNotNormalized { vertex: String, sum: f64 },
    #[error("duplicate edge label out of vertex {0}")]
    DuplicateEdgeLabel(String),
    #[error("incompatible stage ({first}, {second}): {reason}")]
    IncompatibleStage {
        first: String,
        second: String,
        reason: String,
    },
    #[error("failure path passes through two root causes: {0} and {1}")]
    PathThroughTwoRootCauses(String, String),
    #[error("disconnected path at edge {0}")]
    DisconnectedPath(String),
    #[error("unknown root cause {0}")]
    UnknownRootCause(String),
    #[error("remedy {0} has no actions")]
    EmptyActionSet(String),
    #[error("root cause {0} has zero idle probability")]
    ZeroRootProbability(String),
    #[error("omega must be finite and non-negative, got {0}")]
    NonpositiveOmega(f64),
    #[error("beta must be finite and non-negative, got {0}")]
    NonpositiveBeta(f64),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no observations")]
    EmptyData,
    #[error("empty holding cluster")]
    EmptyCluster,
    #[error("shape solver diverged")]
    ShapeSolverDiverged,
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("partitions are over different element sets")]
    ElementSetMismatch,
    #[error("invalid model: {0}")]
    ModelInvalid(String),
    #[error("invalid remedy: {0}")]
    RemedyInvalid(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CegError {
    /// True for errors caused by malformed or inconsistent inputs, as opposed
    /// to failures while running a computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            CegError::ShapeSolverDiverged | CegError::Io(_) | CegError::InsufficientData(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CegError::CycleDetected(_) => "CycleDetected",
            CegError::MultipleParents(_) => "MultipleParents",
            CegError::ThetaNotNormalized { .. } => "ThetaNotNormalized",
            CegError::DuplicateEdgeLabel(_) => "DuplicateEdgeLabel",
            CegError::IncompatibleStage { .. } => "IncompatibleStage",
            CegError::PathThroughTwoRootCauses(..) => "PathThroughTwoRootCauses",
            CegError::DisconnectedPath(_) => "DisconnectedPath",
            CegError::UnknownRootCause(_) => "UnknownRootCause",
            CegError::EmptyActionSet(_) => "EmptyActionSet",
            CegError::ZeroRootProbability(_) => "ZeroRootProbability",
            CegError::NonpositiveOmega(_) => "NonpositiveOmega",
            CegError::NonpositiveBeta(_) => "NonpositiveBeta",
            CegError::ShapeMismatch { .. } => "ShapeMismatch",
            CegError::EmptyData => "EmptyData",
            CegError::EmptyCluster => "EmptyCluster",
            CegError::ShapeSolverDiverged => "ShapeSolverDiverged",
            CegError::StructureMismatch(_) => "StructureMismatch",
            CegError::InsufficientData(_) => "InsufficientData",
            CegError::ElementSetMismatch => "ElementSetMismatch",
            CegError::ModelInvalid(_) => "ModelInvalid",
            CegError::RemedyInvalid(_) => "RemedyInvalid",
            CegError::ConfigInvalid(_) => "ConfigInvalid",
            CegError::Parse(_) => "Parse",
            CegError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for CegError {
    fn from(e: std::io::Error) -> Self {
        CegError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CegError {
    fn from(e: serde_json::Error) -> Self {
        CegError::Parse(e.to_string())
    }
}

impl From<csv::Error> for CegError {
    fn from(e: csv::Error) -> Self {
        CegError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CegError>;
