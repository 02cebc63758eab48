use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("malformed triplet: {0}")]
    MalformedTriplet(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("granularity error: {0}")]
    Granularity(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step}: loss {loss}")]
    TrainingDiverged { step: u64, loss: f64 },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("length prior violated: {bits} bits exceeds 2^{max_bits_log2}")]
    LengthPrior { bits: u64, max_bits_log2: u32 },

    #[error("prior violation: {0}")]
    PriorViolation(String),

    #[error("quadrature precision error: {0}")]
    Precision(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
