//! The output-node Gaussian.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::specfun::normal_cdf;

const INV_SQRT_TWO_PI: f64 = 0.3989422804014327;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::domain(
                "GaussianParams",
                format!("standard deviation must be positive, got {sigma}"),
            ));
        }
        Ok(GaussianParams { mu, sigma })
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        INV_SQRT_TWO_PI / self.sigma * (-0.5 * z * z).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf((x - self.mu) / self.sigma)
    }

    pub fn moments(&self) -> Moments {
        Moments::new(self.mu, self.sigma * self.sigma)
    }
}

impl Sample for GaussianParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = rand_distr::Normal::new(self.mu, self.sigma).expect("validated parameters");
        n.sample(rng)
    }
}
