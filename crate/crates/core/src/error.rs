use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix dimension {0} is not even")]
    OddDimension(usize),

    #[error("invalid Lagrangian frame: {0}")]
    InvalidFrame(String),

    #[error("frame is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("lift does not match det w: |det w - e^(i alpha)| = {0:e}")]
    InvalidLift(f64),

    #[error("path step too coarse at sample {index}: |delta arg det w| = {delta:.4}")]
    Refinement { index: usize, delta: f64 },

    #[error("path is not closed: first and last planes differ")]
    NotClosed,

    #[error("planes are not transversal")]
    NotTransversal,

    #[error("eigenvalue {re:e}{im:+e}i lies on the branch cut of the principal logarithm")]
    BranchCut { re: f64, im: f64 },

    #[error("index formula is not integral: value {value}, residual {residual:e}")]
    Integrality { value: f64, residual: f64 },

    #[error("no auxiliary plane transversal to both arguments was found")]
    NoAuxiliaryPlane,

    #[error("Leray index depends on the auxiliary plane ({first} vs {second})")]
    AuxiliaryMismatch { first: i64, second: i64 },

    #[error("trajectory diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("nonlinear solve failed: {0}")]
    Solver(String),

    #[error("free-window violation at t = {time}: det dx/dp' = {det:e}")]
    FreeWindowViolation { time: f64, det: f64 },

    #[error("conjugate point inside the propagation window at t = {time}")]
    ConjugatePoint { time: f64 },

    #[error("endpoint is conjugate: det dx/dp' = {det:e}")]
    ConjugateEndpoint { det: f64 },

    #[error("point lies off the manifold (distance {0:e})")]
    OffManifold(f64),

    #[error("negative amplitude {0}")]
    NegativeAmplitude(f64),

    #[error("manifold is not quantized")]
    Unquantized,

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// Numerical failures as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Refinement { .. }
                | Error::BranchCut { .. }
                | Error::Integrality { .. }
                | Error::NoAuxiliaryPlane
                | Error::AuxiliaryMismatch { .. }
                | Error::Divergence { .. }
                | Error::Solver(_)
                | Error::FreeWindowViolation { .. }
                | Error::ConjugatePoint { .. }
                | Error::ConjugateEndpoint { .. }
                | Error::RankDeficient(_)
        )
    }
}
