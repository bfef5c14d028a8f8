use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the CLI exit-code contract via [`Error::exit_code`]:
/// validation-class failures exit with 1, I/O and format failures with 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The byte stream is shorter (or longer) than its header declares.
    #[error("length mismatch: {0}")]
    Length(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes the message (e.g. with a flag or file name), keeping the
    /// variant and therefore the exit code.
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{ctx}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{ctx}: {m}")),
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Unsupported(m) => Error::Unsupported(format!("{ctx}: {m}")),
            Error::Length(m) => Error::Length(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// Process exit code for this error (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Validation(_) | Error::Numeric(_) | Error::UndefinedMetric(_) => 1,
            Error::Format(_) | Error::Unsupported(_) | Error::Length(_) | Error::Io { .. } | Error::Csv { .. } => 2,
        }
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
