use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("no parameter pair with a, b <= {bound} satisfies condition1 and condition2")]
    Infeasible { bound: u32 },

    #[error("rectangle count {needed} exceeds the enumeration cap {cap}")]
    CapExceeded { needed: String, cap: u64 },

    #[error("address/coordinate mismatch: {0}")]
    Mismatch(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
