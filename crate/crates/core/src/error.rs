use thiserror::Error;

/// Errors surfaced by the scattering toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported decay exponent rho = {rho} (short range requires rho > 1)")]
    UnsupportedDecay { rho: f64 },

    #[error("integration failed at t = {t_last}: {reason}")]
    IntegrationFailure { t_last: f64, reason: String },

    #[error("trajectory rejected: energy drift {drift:e} exceeds limit {limit:e}")]
    RejectedTrajectory { drift: f64, limit: f64 },

    #[error("no asymptotic data: trajectory is {0}")]
    NoAsymptotics(String),

    #[error("diagonal excluded: outgoing direction coincides with incoming direction")]
    DiagonalExcluded,

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("degenerate endpoint: caustic at the detector (final Jacobi determinant {0:e})")]
    DegenerateEndpoint(f64),

    #[error("patch invalid: {0}")]
    PatchInvalid(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("region error: {0}")]
    Region(String),

    #[error("stencil invalid: {0}")]
    StencilInvalid(String),

    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),

    #[error("aliasing: grid resolution {resolution} below required {required}")]
    Aliasing { resolution: usize, required: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
