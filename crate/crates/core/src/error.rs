use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    /// The Riccati recursion left every reasonable bound, typically an
    /// unobservable pair with an unstable state matrix.
    #[error("riccati iteration diverged after {iterations} iterations (norm {norm:e})")]
    Divergence { iterations: usize, norm: f64 },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// The steady state of a linear recursion does not exist; the covariance may diverge.
    #[error("spectral radius {rho} >= 1, the covariance may diverge")]
    Unstable { rho: f64 },

    #[error("graph is not connected")]
    Disconnected,

    #[error("no connected graph after {attempts} attempts; try a larger radius")]
    GraphGeneration { attempts: usize },

    #[error("(A, C) is not observable: {0}")]
    Unobservable(String),

    #[error("node {node} with fusion depth L = {depth}: modified pair is not observable, the estimate may diverge")]
    NodeUnobservable { node: usize, depth: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("usage error: {0}")]
    Usage(String),
}
