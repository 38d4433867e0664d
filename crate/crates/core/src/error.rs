use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes that must agree do not.
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    /// An architectural or layer configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-provided data violates an operation's contract.
    #[error("input error: {0}")]
    Input(String),

    /// Normalization statistics cannot be estimated from the given extent.
    #[error("{op}: degenerate statistics ({detail})")]
    DegenerateStatistics { op: &'static str, detail: String },

    /// `backward` was called on a layer that holds no forward activations.
    #[error("{0}: backward called without a cached forward pass")]
    MissingForward(&'static str),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        left: impl std::fmt::Debug,
        right: impl std::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }
}
