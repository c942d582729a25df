use thiserror::Error;

/// Errors produced anywhere in the tomography pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pauli index {0} out of range 0..16")]
    PauliIndex(usize),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("trace {0:.12} differs from 1")]
    BadTrace(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),
    #[error("operator is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("state vector not normalized (norm {0:.12})")]
    NotNormalized(f64),
    #[error("process is not trace preserving (residual {0:.3e})")]
    NotTracePreserving(f64),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing expectation value for observable {0}")]
    MissingObservable(String),
    #[error("counts record {0} has zero shots")]
    ZeroShots(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("Fock cutoff {cutoff} too small: top-level population {population:.3e}")]
    CutoffInsufficient { cutoff: usize, population: f64 },
    #[error("integration did not converge: step-halving changed populations by {0:.3e}")]
    NonConvergentIntegration(f64),
    #[error("design hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("counts inconsistent with design: {0}")]
    Inconsistent(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
