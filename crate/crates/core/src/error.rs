use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto one of three coarse classes (see [`ErrorClass`]) so
/// command-line front ends can translate failures into stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty lake geometry")]
    EmptyGeometry,

    #[error("self-intersecting lake polygon")]
    SelfIntersectingPolygon,

    #[error("lake too large for patch")]
    LakeTooLarge,

    #[error("no clean pixels")]
    NoCleanPixels,

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("insufficient acquisitions")]
    InsufficientAcquisitions,

    #[error("missing step-1 weights")]
    MissingStepOneWeights,

    #[error("missing prerequisite stage: {0}")]
    MissingPrerequisite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Contract,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Contract => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Contract => "contract",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::EmptyGeometry
            | Error::SelfIntersectingPolygon
            | Error::LakeTooLarge
            | Error::NoCleanPixels
            | Error::NoValidPixels
            | Error::InsufficientAcquisitions
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::MissingStepOneWeights
            | Error::MissingPrerequisite(_)
            | Error::Shape(_)
            | Error::Contract(_) => ErrorClass::Contract,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
