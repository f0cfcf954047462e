//! Analytic prediction of the layer-wise output distributions of a nonlinear
//! deep-feature aggregation block (scaled exponential activation, global
//! average pooling, power deactivation, fully connected output), the
//! closed-form KL divergence of the class-conditional output node, its
//! gradient-based optimization, and a Monte Carlo simulator for verifying
//! every formula.
//!
//! Modules follow the processing chain:
//! - [`specfun`]: scalar special functions (Gamma family, digamma, incomplete
//!   Gamma).
//! - [`distributions`]: the zero-Gamma mixture and its exponential / power
//!   transforms, with pdfs, moments and exact transform sampling.
//! - [`propagation`]: moment and covariance propagation through the block and
//!   the Gaussian KL divergence.
//! - [`fitting`]: parameter estimation from observed activation dumps.
//! - [`simulator`]: synthetic correlated activations and the empirical
//!   forward pass.
//! - [`klopt`]: analytic KL gradients and backtracking gradient ascent.

pub mod distributions;
pub mod error;
pub mod fitting;
pub mod klopt;
pub mod moments;
pub mod propagation;
pub mod simulator;
pub mod specfun;
pub mod util;

pub use distributions::{
    ExpGammaParams, GaussianParams, GenGammaParams, Sample, ZeroExpGammaParams, ZeroGammaParams,
};
pub use error::{Error, Result};
pub use moments::Moments;
pub use propagation::{
    kl_gaussian, predict_block, predict_block_independent, ActivationConfig, BlockPrediction,
    BlockStats, CovMatrix, FCWeights, GaussianPair,
};
