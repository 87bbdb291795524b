use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A documented precondition or invariant was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared during a forward or backward pass.
    #[error("numeric error at node {node}: {msg}")]
    Numeric { node: usize, msg: String },

    /// Regression fitting could not proceed.
    #[error("fit error: {0}")]
    Fit(String),

    /// The thermal simulation left the plausibility envelope.
    #[error("simulation blow-up: {msg} (dt = {dt} s)")]
    SimBlowUp { dt: f64, msg: String },

    /// Invalid experiment configuration; lists the offending keys.
    #[error("config error: {0}")]
    Config(String),

    /// A command needs an artifact another command has not produced yet.
    #[error("missing artifact: {path} — run `{produced_by}` first")]
    MissingArtifact { path: PathBuf, produced_by: String },

    /// A stream cursor ran past the last usable row.
    #[error("end of stream")]
    EndOfStream,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
