//! The distribution families of the aggregation chain: the zero-Gamma mixture
//! modelling post-ReLU convolutional outputs, its exponential transform, the
//! power-transformed (generalized) Gamma of the deactivation layer, and the
//! output-node Gaussian.
//!
//! Mixed families expose the point mass and the continuous density as separate
//! channels. Sampling always transforms exact Gamma draws rather than
//! inverting derived pdfs, so samples follow the generative story exactly.

mod exp_gamma;
mod gaussian;
mod gen_gamma;
mod zero_gamma;

pub use exp_gamma::{ExpGammaParams, ZeroExpGammaParams};
pub use gaussian::GaussianParams;
pub use gen_gamma::{GenGammaParams, DEFAULT_SERIES_ORDER};
pub use zero_gamma::ZeroGammaParams;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Draw one value from a distribution with a caller-owned RNG.
pub trait Sample {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;

    /// n i.i.d. draws, deterministic for a fixed seed.
    fn sample_n(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}
