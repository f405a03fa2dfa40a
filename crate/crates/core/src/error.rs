use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("cannot branch: {0}")]
    Branch(String),

    #[error("instance is infeasible")]
    InfeasibleInstance,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("feature schema mismatch: expected `{expected}`, got `{found}`")]
    SchemaMismatch { expected: String, found: String },

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("unknown scripted node: {0}")]
    UnknownNode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
