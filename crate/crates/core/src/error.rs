use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("unsupported limit: {0}")]
    UnsupportedLimit(String),

    #[error("mixture mass not covered by bounds: {0}")]
    Coverage(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
