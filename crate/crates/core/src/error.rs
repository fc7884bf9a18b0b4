use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingestion error in {record}: {message}")]
    Schema { record: String, message: String },

    #[error("question ids without gold output: [{}]; gold ids without question: [{}]", .missing_gold.join(", "), .missing_question.join(", "))]
    IdMismatch {
        missing_gold: Vec<String>,
        missing_question: Vec<String>,
    },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot render document {doc_id}: missing field `{field}`")]
    MissingField { doc_id: String, field: String },

    #[error("unknown document {doc_id} for profile {user_id}")]
    UnknownDocument { doc_id: String, user_id: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("generation failed for prompt {prompt_hash}: {message}")]
    Generation { prompt_hash: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
