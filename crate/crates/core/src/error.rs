use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedroError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedroError {
    /// Empty input or vectors of mismatched dimension.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A count or parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Non-finite or otherwise invalid numeric value.
    #[error("value error: {0}")]
    Value(String),

    /// A problem family could not be built as requested.
    #[error("construction error: {0}")]
    Construction(String),
}

impl FedroError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FedroError::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        FedroError::Dimension(msg.into())
    }
}
