use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point is off the manifold (residual {residual:.3e})")]
    OffManifold { residual: f64 },
    #[error("point is not on the boundary (distance {distance:.3e})")]
    NotOnBoundary { distance: f64 },
    #[error("parallel transport between antipodal points is undefined")]
    DegenerateTransport,
    #[error("step left the manifold after {0} reflections")]
    StepTooLarge(usize),
    #[error("conformal factor is not positive at the point (phi = {0:.3e})")]
    OutsideConformalDomain(f64),
    #[error("bound function is negative ({0:.3e})")]
    InvalidBound(f64),
    #[error("time {time} outside [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("discarded {discarded} of {total} paths, above the 0.1% budget")]
    DiscardBudget { discarded: usize, total: usize },
    #[error("least-squares fit is ill-conditioned (condition number {0:.3e})")]
    IllConditionedFit(f64),
    #[error("conditional expectation is not positive ({0:.3e})")]
    Conditioning(f64),
    #[error("nested simulation budget exceeded: {0} inner paths")]
    NestedBudget(usize),
    #[error("exit probability {measured:.3e} above threshold {threshold:.3e}")]
    ExitProbability { measured: f64, threshold: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("test function certification failed: {0}")]
    Certification(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
