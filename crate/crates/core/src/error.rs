use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("pre-training failed: {0}")]
    Pretraining(String),
    #[error("model fitting failed: {0}")]
    Fitting(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("temporal leakage: {0}")]
    Leakage(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
