use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps `Config`/`Data`/`Io`/`Json` to exit code 2 (usage or
/// configuration problems) and `Shape`/`NonFinite`/`Grad`/`Numeric` to
/// exit code 3 (numeric failures at runtime).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {details}")]
    Shape { op: &'static str, details: String },

    #[error("{op}: produced non-finite values{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        context: Option<String>,
    },

    #[error("gradient error: {0}")]
    Grad(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn non_finite(op: &'static str) -> Self {
        Error::NonFinite { op, context: None }
    }

    pub fn non_finite_at(op: &'static str, context: impl Into<String>) -> Self {
        Error::NonFinite {
            op,
            context: Some(context.into()),
        }
    }

    /// True for errors that indicate a numeric breakdown rather than misuse.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. } | Error::NonFinite { .. } | Error::Grad(_) | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
