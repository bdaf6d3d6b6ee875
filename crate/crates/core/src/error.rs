use alloc::string::String;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("loss is undefined without ground-truth labels")]
    NoLabels,

    #[error("{labels} ground-truth labels cannot be padded to {queries} queries")]
    TooManyLabels { labels: usize, queries: usize },

    #[error("cannot place events: {0}")]
    Placement(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("no class has a ground-truth instance")]
    NoEvaluableClass,

    #[error("frame {0} is not covered by any window")]
    Uncovered(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
