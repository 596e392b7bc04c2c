use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Gaussian source: {0}")]
    InvalidSource(String),

    #[error("ill-conditioned source: {what} has condition number {cond:.3e}")]
    IllConditioned { what: &'static str, cond: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no informative component: every eigenvalue is 1, nothing can be transmitted")]
    EmptyGrid,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("surrogate fit failed: {0}")]
    Fit(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
