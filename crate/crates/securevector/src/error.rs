use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid key size {bits}: key size must be an even bit count of at least 64")]
    InvalidKeySize { bits: u32 },

    #[error("plaintext out of range: messages must lie in [0, n)")]
    PlaintextOutOfRange,

    #[error("ciphertext out of range: values must lie in [0, n^2)")]
    CiphertextOutOfRange,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("component out of range: {0}")]
    OutOfRange(String),

    #[error("corrupt token: combined value exceeds the admissible digit span")]
    CorruptToken,

    #[error("norm {value:e} outside the admissible range [{lo:e}, {hi:e}]")]
    NormOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fingerprint mismatch: records were produced under a different parameter set or key")]
    FingerprintMismatch,

    #[error("malformed document: {0}")]
    Parse(String),

    #[error("unsupported document version {found}")]
    VersionMismatch { found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
