use std::io;

use thiserror::Error;

/// Failure categories surfaced by the library. The CLI maps each variant onto
/// a distinct process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(format!($($arg)*))
    };
}

macro_rules! data_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Data(format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use data_err;
pub(crate) use shape_err;
