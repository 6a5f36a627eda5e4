use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("wrong frame kind: expected {expected}, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("frame stack is empty")]
    EmptyStack,

    #[error("region selects no pixels")]
    EmptyRegion,

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("nothing to plot")]
    EmptyData,

    #[error("{path}: bad magic, not an EMF1 frame file")]
    BadMagic { path: PathBuf },

    #[error("{path}: payload truncated ({found} of {expected} bytes)")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {extra} bytes beyond the declared payload")]
    TrailingData { path: PathBuf, extra: u64 },

    #[error("{path}: unsupported EMF version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{path}: unknown pixel dtype {dtype}")]
    UnknownDtype { path: PathBuf, dtype: u16 },

    #[error("low-illumination contract violated: p_ph = {p_ph} (must be < {limit})")]
    LowIllumination { p_ph: f64, limit: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
