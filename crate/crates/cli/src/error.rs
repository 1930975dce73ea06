//! Application errors with the stable exit-code contract:
//! 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        AppError::Numerical(msg.into())
    }

    /// IO failure while touching a data or output file.
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }
}

pub type AppResult<T> = Result<T, AppError>;

/// Resolves a possibly relative path against a base directory.
pub fn resolve(base: &std::path::Path, p: &std::path::Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
