//! Error types shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument left the domain of an operation.
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// Gamma function evaluated at a non-positive integer.
    #[error("gamma pole at z = {z}")]
    Pole { z: f64 },

    /// A value exceeded the representable range of f64.
    #[error("{op}: overflow at value {value}")]
    Overflow { op: &'static str, value: f64 },

    /// Second moment of the exp-transformed distribution does not exist.
    #[error("variance diverges: beta * s = {beta_s} >= 1/2")]
    VarianceDiverges { beta_s: f64 },

    /// A propagated variance came out negative, signalling inconsistent inputs.
    #[error("{context}: negative predicted variance {value}")]
    NegativeVariance { context: &'static str, value: f64 },

    /// Output-node variance must be strictly positive.
    #[error("non-positive output variance {value}")]
    NonPositiveOutputVariance { value: f64 },

    /// Too few samples to fit.
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// An iterative solver failed to converge.
    #[error("{op}: no convergence after {iters} iterations")]
    NonConvergence { op: &'static str, iters: usize },

    /// A required cross-moment entry is not available.
    #[error("missing moment: {0}")]
    MissingMoment(String),

    /// Mismatched dimensions between related inputs.
    #[error("{what}: dimension mismatch, expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Latent correlation matrix is not positive definite.
    #[error("latent correlation matrix is not positive definite")]
    NotPositiveDefinite,

    /// Degenerate sample (all values identical).
    #[error("{op}: degenerate sample")]
    Degenerate { op: &'static str },

    /// Error raised inside a named layer of the propagation chain.
    #[error("layer `{layer}`: {source}")]
    AtLayer {
        layer: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Optimizer aborted; carries the iteration at which the failure occurred.
    #[error("optimizer aborted at iteration {iteration}: {source}")]
    OptAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    /// Wrap an error with the propagation-layer name it occurred in.
    pub fn at_layer(self, layer: &'static str) -> Self {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }
}
