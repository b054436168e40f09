use thiserror::Error;

/// Errors raised by state algebra, measurements and protocol stages.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("states live on different mode registries or bus sets")]
    RegistryMismatch,
    #[error("unknown mode: {0}")]
    UnknownMode(String),
    #[error("two photons would occupy mode {0}")]
    ModeCollision(String),
    #[error("more than one photon on side {0}")]
    SideOverfilled(String),
    #[error("cannot normalize a zero-norm state")]
    ZeroNorm,
    #[error("target state is not normalized (squared norm {0})")]
    NonNormalizedTarget(f64),
    #[error("non-finite coherent amplitude")]
    NonFinite,
    #[error("coherent amplitude magnitude {0} exceeds the configured maximum")]
    AmplitudeTooLarge(f64),
    #[error("QND separation too small for ideal heralding: click exponent {exponent} < {required}")]
    SeparationTooSmall { exponent: f64, required: f64 },
    #[error("photon-number distribution tail {tail:e} still above tolerance at n = {n_max}")]
    TruncationFailure { n_max: u64, tail: f64 },
    #[error("Fock cutoff {cutoff} leaks {leak:e} of the norm")]
    CutoffLeakage { cutoff: usize, leak: f64 },
    #[error("coherent amplitude {amp} needs more than cutoff {cutoff} Fock levels")]
    TailTooHeavy { amp: f64, cutoff: usize },
    #[error("oracle supports at most {max} bus modes, got {got}")]
    TooManyBuses { max: usize, got: usize },
    #[error("unambiguous-discrimination back-end requires a real qubus amplitude")]
    NonRealAlpha,
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("invalid input state: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
