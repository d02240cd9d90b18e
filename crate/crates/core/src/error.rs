use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state space of {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: u128 },

    #[error("family member p_z has a negative entry (min {min_entry:e})")]
    InvalidMember { min_entry: f64 },

    #[error("channel violates constraint: {0}")]
    ConstraintViolated(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// Stable short name of the variant, for machine-readable records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::InvalidChannel(_) => "invalid_channel",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::InvalidMember { .. } => "invalid_member",
            Error::ConstraintViolated(_) => "constraint_violated",
            Error::NotPsd(_) => "not_psd",
            Error::Overflow(_) => "overflow",
            Error::Parse(_) => "parse",
        }
    }
}
