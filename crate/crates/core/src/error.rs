use thiserror::Error;

/// Errors raised by the solver kernels, oracles and harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported order {order} (ceiling is {ceiling})")]
    UnsupportedOrder { order: usize, ceiling: usize },
    #[error("degenerate tableau: {0}")]
    DegenerateTableau(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("multistep update needs a history entry; bootstrap with a single-step method first")]
    BootstrapRequired,
    #[error("reference solution did not converge: refinement changed the result by {0:e}")]
    ReferenceQuality(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation counter reads {got}, the NFE formula gives {expected}")]
    NfeMismatch { expected: u64, got: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
