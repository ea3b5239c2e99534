use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmoError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("malformed matrix file: {0}")]
    MatrixFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FmoError {
    pub fn config(msg: impl Into<String>) -> Self {
        FmoError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FmoError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(FmoError::Dimension {
            context,
            expected,
            actual,
        })
    }
}
