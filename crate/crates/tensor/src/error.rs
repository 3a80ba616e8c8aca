use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::TensorError::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
