use thiserror::Error;

/// Errors surfaced by the library. `Inconsistency` is reserved for hard
/// failures that signal an implementation bug (the two cusp counts
/// disagreeing, a non-integral genus, a kernel that is not of exponential
/// form): they must never occur on valid inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u32, right: u32 },

    #[error("determinant {det} is not 1 modulo {modulus}")]
    NonUnitDeterminant { modulus: u32, det: u32 },

    #[error("{divisor} does not divide the modulus {modulus}")]
    InvalidDivisor { modulus: u32, divisor: u32 },

    #[error("bad factorization: {0}")]
    BadFactorization(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("domain error in exponential map: {0}")]
    ExpDomain(String),

    #[error("internal inconsistency (bug): {0}")]
    Inconsistency(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
