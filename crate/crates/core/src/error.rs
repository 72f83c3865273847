use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("chain needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
    #[error("chain has more than one closed class")]
    NotIrreducible,
    #[error("chain is periodic")]
    NotAperiodic,
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("derivative matrix row {row} sums to {sum}, expected 0")]
    DerivativeRowSum { row: usize, sum: f64 },
    #[error("zeta domain [{lo}, {hi}] does not contain [-{h}, {h}]")]
    DomainTooSmall { lo: f64, hi: f64, h: f64 },
    #[error("zeta = {zeta} lies outside the family domain [{lo}, {hi}]")]
    InvalidZetaDomain { zeta: f64, lo: f64, hi: f64 },
    #[error("invalid input process: {0}")]
    InvalidInput(String),
    #[error("input autocovariance is not a sum of distinct real geometric terms: {0}")]
    NonGeometricCovariance(String),
    #[error("truncated sum did not converge within {max_terms} terms")]
    TruncationNotConverged { max_terms: usize },
    #[error("lag series tail is not summable: {0}")]
    TailNotSummable(String),
    #[error("covariance tail did not converge: {0}")]
    TailNotConverged(String),
    #[error("resolvent is singular at theta = {theta}")]
    SingularResolvent { theta: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lag {lag} exceeds a tenth of the path length {len}")]
    LagTooLarge { lag: i64, len: usize },
    #[error("load must lie in (0, 1), got {0}")]
    InvalidLoad(f64),
    #[error("buffer bound must be at least 1, got {0}")]
    InvalidBuffer(usize),
    #[error("support of the first distribution is not contained in the second (index {index})")]
    SupportViolation { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of an iterative or truncated computation, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::TruncationNotConverged { .. }
                | Error::TailNotSummable(_)
                | Error::TailNotConverged(_)
                | Error::SingularResolvent { .. }
        )
    }
}
