use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene sizing: {0}")]
    Sizing(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("illegal transition: {0}")]
    IllegalTransition(String),

    #[error("unsatisfiable episode: {0}")]
    Unsatisfiable(String),

    #[error("target unreachable: {0}")]
    Unreachable(String),

    #[error("unknown vocabulary entry: {0}")]
    Vocabulary(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("annotation failed at step {step}: {message} (raw response: {raw:?})")]
    Annotation {
        step: usize,
        message: String,
        raw: String,
    },

    #[error("chat transport error: {0}")]
    Transport(String),

    #[error("chat service returned status {status}: {body}")]
    Service { status: u16, body: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
