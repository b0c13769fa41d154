use thiserror::Error;

/// Errors raised by the tomography pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "truncation leakage {leakage:.3e} exceeds tolerance {tolerance:.1e} at n_max = {n_max}"
    )]
    LeakageExceeded {
        leakage: f64,
        tolerance: f64,
        n_max: usize,
    },

    #[error("Fock index {k} outside truncation n_max = {n_max}")]
    IndexOutOfTruncation { k: usize, n_max: usize },

    #[error("detector efficiency {0} outside (0, 1]")]
    InvalidEta(f64),

    #[error("basis vectors are not orthonormal (max deviation {0:.3e})")]
    NonOrthonormalBasis(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("local oscillator amplitude is zero")]
    ZeroLo,

    #[error("outcome labels do not carry the required statistics: {0}")]
    WrongLabels(&'static str),

    #[error("probability {0:.3e} is negative beyond tolerance")]
    NegativeProbability(f64),

    #[error("observed outcome {0} has no matching protocol row")]
    UnknownOutcome(String),

    #[error("total information operator is singular")]
    SingularItot,

    #[error("iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("row with non-zero Λc has underflowing probability {0:.3e}")]
    ZeroProbabilityRow(f64),

    #[error("spectrum classification failed: {0}")]
    SpectrumClassificationFailed(String),

    #[error("physical eigenvalue {0:.3e} is not positive")]
    NonPositiveEigenvalue(f64),

    #[error("protocol is incomplete: {found} informative directions, {expected} required")]
    IncompleteProtocol { found: usize, expected: usize },

    #[error("not a density matrix: {0}")]
    NotAState(String),

    #[error("phase {phase} has expected total {total:.3} below {required:.3}")]
    PhaseTooSparse {
        phase: usize,
        total: f64,
        required: f64,
    },

    #[error("grouping bin has non-positive expected count")]
    ZeroExpectedBin,

    #[error("degrees of freedom {0} are not positive")]
    NonPositiveDof(i64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error("campaign aborted: {failed} of {total} runs failed")]
    CampaignAborted { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
