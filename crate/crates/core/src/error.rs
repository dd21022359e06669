use alloc::string::String;

/// Failure modes shared by every operation in the crate.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes or an invalid architectural setting.
    #[error("configuration error: {0}")]
    Config(String),
    /// The caller broke an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values or a failed numerical check.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::Error::Usage(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use usage_err;
