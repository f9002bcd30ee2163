use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or function parameter is out of its valid range.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// The pump was detuned outside the soliton existence window.
    #[error("soliton lost: pump detuning {detuning_hz:.3e} Hz exceeds existence window {window_hz:.3e} Hz")]
    SolitonLoss { detuning_hz: f64, window_hz: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input; `row`/`column` locate the offending cell when known.
    #[error("parse error{}: {message}", location(.row, .column))]
    Parse {
        row: Option<String>,
        column: Option<String>,
        message: String,
    },

    /// Data parsed fine but breaks a counts-ledger invariant.
    #[error("invariant violated in `{context}`: {message}")]
    Invariant { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

fn location(row: &Option<String>, column: &Option<String>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row `{r}`, column `{c}`"),
        (Some(r), None) => format!(" at row `{r}`"),
        (None, Some(c)) => format!(" at column `{c}`"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(
        row: Option<&str>,
        column: Option<&str>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            row: row.map(str::to_owned),
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for invariant failures, 2 for usage and parse errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant { .. } => 1,
            _ => 2,
        }
    }
}
