use std::path::PathBuf;

/// Errors raised by the library and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incomplete oracle data: record at index {index} is selected but has no coverage flag")]
    IncompleteOracle { index: u64 },

    #[error("double advance: time {time} was already recorded")]
    DoubleAdvance { time: u64 },

    #[error("protocol order violation: {0}")]
    ProtocolOrder(String),

    #[error("observation inconsistent with selection event: x = {x}, {event}")]
    OutsideSelectionEvent { x: f64, event: String },

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("rule violates nesting: indicator not monotone in level near x = {x}, level = {level}")]
    NotNested { x: f64, level: f64 },

    #[error("no closed-form cutoff; use bisection audit")]
    NoClosedForm,

    #[error("conditional law unavailable for selection {0}")]
    ConditionalUnavailable(String),

    #[error("calibration set too small: quantile index {index} exceeds {n_cal} calibration points")]
    CalibrationTooSmall { index: usize, n_cal: usize },

    #[error("malformed input at line {line}: {message}")]
    MalformedInput { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage and configuration problems map to exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Config(_) | Error::MalformedInput { .. } | Error::Json(_)
        )
    }

    /// The reader of our output went away (e.g. `| head`).
    pub fn is_broken_pipe(&self) -> bool {
        let kind = match self {
            Error::Io { source, .. } => Some(source.kind()),
            Error::Json(e) => e.io_error_kind(),
            Error::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(io) => Some(io.kind()),
                _ => None,
            },
            _ => None,
        };
        kind == Some(std::io::ErrorKind::BrokenPipe)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Rejects levels outside the open unit interval (with a 1e-12 guard band).
pub(crate) fn check_level(level: f64) -> Result<()> {
    if level.is_finite() && level > 1e-12 && level < 1.0 - 1e-12 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level must lie in (0, 1), got {level}")))
    }
}

pub(crate) fn check_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {x}")))
    }
}
