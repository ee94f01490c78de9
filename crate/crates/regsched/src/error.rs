use std::fmt;

/// Crate-wide error type. Variants map onto the failure classes the public
/// operations can report; the CLI collapses them into exit codes (config-time
/// problems exit 1, runtime problems exit 2).
#[derive(Debug)]
pub enum Error {
    /// Shape or size mismatch between numeric objects.
    Dimension(String),
    /// Invalid configuration or precondition violation.
    Config(String),
    /// Structured input (checkpoint, CSV header, config file) does not match
    /// the expected schema.
    Schema(String),
    /// Unparseable cell or document content.
    Parse(String),
    /// Input too small to be usable.
    Size(String),
    /// Index or iteration outside the valid range.
    Range(String),
    /// Genome kind or length mismatch in the evolution engine.
    Genome(String),
    /// Failure while running (diverged training, missing artifact, ...).
    Runtime(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error is a configuration-time problem (CLI exit code 1)
    /// rather than a runtime failure (exit code 2).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Schema(_) | Error::Parse(_) | Error::Size(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Size(msg) => write!(f, "size error: {msg}"),
            Error::Range(msg) => write!(f, "range error: {msg}"),
            Error::Genome(msg) => write!(f, "genome error: {msg}"),
            Error::Runtime(msg) => write!(f, "runtime error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
