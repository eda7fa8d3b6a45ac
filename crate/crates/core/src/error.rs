use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("cannot extract power-series root: {0}")]
    RootExtraction(String),

    #[error("kernel series does not converge: {0}")]
    Convergence(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{nodes} nodes exceeds the dense limit of {limit}; use the matrix-free apply() path instead")]
    NodeLimit { nodes: usize, limit: usize },

    #[error("relative error undefined: masked ground truth is all zero")]
    UndefinedDenominator,

    #[error("mesh format error: {0}")]
    Format(String),

    #[error("{context}: {cause}")]
    Experiment { context: String, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Experiment {
            context: what(),
            cause: Box::new(e),
        })
    }
}
