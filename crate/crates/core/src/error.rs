use thiserror::Error;

/// Library error type. Each variant belongs to one of the exit-code classes
/// used by the command-line runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("element is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("zero element where a non-zero positive element is required")]
    ZeroInput,

    #[error("degenerate pair: states coincide within tolerance")]
    DegeneratePair,

    #[error("degenerate sampling: every probe had vanishing weight")]
    DegenerateSampling,

    #[error("state lies in the kernel of the map (trace of image {0:.3e})")]
    KernelState(f64),

    #[error("fixed-point iteration did not converge after {iters} iterations (last step {last_step:.3e})")]
    Convergence { iters: usize, last_step: f64 },

    #[error("map is not faithful: {0}")]
    NotFaithful(String),

    #[error("invertibility hypothesis violated: {0}")]
    InvertibilityViolation(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("missing limit estimate: {0}")]
    MissingLimit(String),

    #[error("support of observable exceeds interval: {0}")]
    SupportExceeded(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 input, 3 math-domain, 4 hypothesis violation, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::NotHermitian(_)
            | Error::SupportExceeded(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::ZeroInput
            | Error::DegeneratePair
            | Error::DegenerateSampling
            | Error::KernelState(_)
            | Error::Convergence { .. }
            | Error::NotEnoughData(_)
            | Error::MissingLimit(_) => 3,
            Error::NotFaithful(_) | Error::InvertibilityViolation(_) => 4,
            Error::Internal(_) => 5,
        }
    }

    /// Short machine-readable tag for JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NotHermitian(_) => "not_hermitian",
            Error::ZeroInput => "zero_input",
            Error::DegeneratePair => "degenerate_pair",
            Error::DegenerateSampling => "degenerate_sampling",
            Error::KernelState(_) => "kernel_state",
            Error::Convergence { .. } => "convergence",
            Error::NotFaithful(_) => "not_faithful",
            Error::InvertibilityViolation(_) => "invertibility_violation",
            Error::NotEnoughData(_) => "not_enough_data",
            Error::MissingLimit(_) => "missing_limit",
            Error::SupportExceeded(_) => "support_exceeded",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Internal(_) => "internal",
        }
    }
}
