use crate::certificates::ConstantsReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported dimension {dim} for the {kind} model (built-ins other than gaussian are one-dimensional)")]
    UnsupportedDim { kind: &'static str, dim: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty grid")]
    EmptyGrid,

    #[error("profile is not dissipative at infinity: b0(r)/r = {ratio} at r = {r}")]
    NotDissipative { r: f64, ratio: f64 },

    #[error("quadrature tolerance unreachable on this grid: achieved residual {achieved:e}, required {required:e}")]
    ToleranceUnreachable { achieved: f64, required: f64 },

    #[error("interaction condition violated: margin 1 - ||d2xy W|| * sup h' = {}", .0.h_margin)]
    InteractionTooStrong(Box<ConstantsReport>),

    #[error("drift growth condition fails: c1 - c3 - ||d2xy W|| = {0} is not positive")]
    DriftGrowthViolated(f64),

    #[error("report is not certified")]
    Uncertified,

    #[error("non-finite position at particle {particle} after step {step}; dt is too large for this drift")]
    Blowup { particle: usize, step: u64 },

    #[error("provider time {provider} does not match ensemble time {ensemble}")]
    ProviderTime { provider: f64, ensemble: f64 },

    #[error("no law provider for {0}")]
    ProviderUnavailable(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
