use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by configuration validation, solvers, and the experiment
/// driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A domain type was constructed with inconsistent fields.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A fixed-point solver ran out of iterations.
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Saturation collapse: a loss probability reached 1 and the throughput
    /// normalization diverges.
    #[error("throughput undefined: {0}")]
    SaturationCollapse(String),

    /// A problem instance exceeds the size bound of an enumeration-based
    /// routine.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// Config text failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Config parsed but a field is semantically invalid.
    #[error("invalid value for `{field}`: {message}")]
    Semantic { field: String, message: String },

    /// Malformed wire payload.
    #[error("malformed payload: {0}")]
    Payload(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Run failure annotated with sweep coordinates.
    #[error("run failed at axis={axis}, scheme={scheme}, seed={seed}: {source}")]
    Run {
        axis: String,
        scheme: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidConfig(msg.to_string())
    }

    pub(crate) fn semantic(field: &str, msg: impl fmt::Display) -> Self {
        Error::Semantic {
            field: field.to_string(),
            message: msg.to_string(),
        }
    }
}
