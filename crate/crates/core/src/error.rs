use thiserror::Error;

/// Errors raised by the expansion engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("resource limit exceeded: {what} = {value} exceeds cap {cap}")]
    Resource {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("numeric error: {message} (residual {residual:.3e})")]
    Numeric { message: String, residual: f64 },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("stability violated: {0}")]
    Stability(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, residual: f64) -> Self {
        Error::Numeric {
            message: msg.into(),
            residual,
        }
    }

    pub(crate) fn resource(what: &'static str, value: usize, cap: usize) -> Self {
        Error::Resource { what, value, cap }
    }

    /// True for failures caused by the numbers (as opposed to the inputs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. }
                | Error::Model(_)
                | Error::Consistency(_)
                | Error::Invariant(_)
                | Error::Stability(_)
                | Error::Normalization(_)
        )
    }
}
