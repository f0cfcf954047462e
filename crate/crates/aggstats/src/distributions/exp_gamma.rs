//! Distribution of the scaled exponential transform g(x) = alpha (e^{beta x} - 1)
//! applied to Gamma and zero-Gamma random variables.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::specfun::{lgamma_fn, reg_lower_incomplete_gamma};

/// Exp-transformed Gamma: X ~ Gamma(a, s), Y = alpha (e^{beta X} - 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpGammaParams {
    pub a: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ExpGammaParams {
    pub fn new(a: f64, s: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(a > 0.0 && s > 0.0 && alpha > 0.0 && beta > 0.0) {
            return Err(Error::domain(
                "ExpGammaParams",
                format!("all parameters must be positive, got a = {a}, s = {s}, alpha = {alpha}, beta = {beta}"),
            ));
        }
        Ok(ExpGammaParams { a, s, alpha, beta })
    }

    /// Density for x > 0, including the 1/alpha prefactor required for
    /// normalization.
    pub fn density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(
                "exp_gamma_pdf",
                format!("support is (0, inf), got {x}"),
            ));
        }
        let bs = self.beta * self.s;
        let w = (x / self.alpha).ln_1p();
        let ln_pdf = -self.alpha.ln() - lgamma_fn(self.a)? - self.a * bs.ln()
            + (self.a - 1.0) * w.ln()
            - (bs + 1.0) / bs * w;
        Ok(ln_pdf.exp())
    }

    /// Exact CDF through the Gamma CDF of the inverse transform.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        let inv = (x / self.alpha).ln_1p() / self.beta;
        reg_lower_incomplete_gamma(self.a, inv / self.s)
    }

    /// Mean and variance of the transformed variable. The second moment only
    /// exists for beta * s < 1/2.
    pub fn moments(&self) -> Result<Moments> {
        let bs = self.beta * self.s;
        if bs >= 0.5 {
            return Err(Error::VarianceDiverges { beta_s: bs });
        }
        let mean = self.alpha * ((1.0 - bs).powf(-self.a) - 1.0);
        let variance = self.alpha * self.alpha
            * ((1.0 - 2.0 * bs).powf(-self.a) - (1.0 - bs).powf(-2.0 * self.a));
        Ok(Moments::new(mean, variance))
    }

    fn transform(&self, x: f64) -> f64 {
        self.alpha * (self.beta * x).exp_m1()
    }
}

impl Sample for ExpGammaParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = rand_distr::Gamma::new(self.a, self.s).expect("validated parameters");
        self.transform(g.sample(rng))
    }
}

/// Zero-ExpGamma: the exp transform of a zero-Gamma variable. The zero mass
/// stays at g(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroExpGammaParams {
    pub p: f64,
    pub inner: ExpGammaParams,
}

impl ZeroExpGammaParams {
    pub fn new(p: f64, inner: ExpGammaParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(
                "ZeroExpGammaParams",
                format!("zero mass must lie in [0, 1], got {p}"),
            ));
        }
        Ok(ZeroExpGammaParams { p, inner })
    }

    pub fn point_mass(&self) -> f64 {
        self.p
    }

    /// Continuous density, weighted by (1 - p).
    pub fn density(&self, x: f64) -> Result<f64> {
        Ok((1.0 - self.p) * self.inner.density(x)?)
    }

    /// mean = alpha (1-p) (1/(1-bs)^a - 1);
    /// variance = alpha^2 (1-p) [1/(1-2bs)^a - (1-p)/(1-bs)^{2a} - 2p/(1-bs)^a + p].
    pub fn moments(&self) -> Result<Moments> {
        let a = self.inner.a;
        let alpha = self.inner.alpha;
        let bs = self.inner.beta * self.inner.s;
        if bs >= 0.5 {
            return Err(Error::VarianceDiverges { beta_s: bs });
        }
        let q = 1.0 - self.p;
        let mean = alpha * q * ((1.0 - bs).powf(-a) - 1.0);
        let variance = alpha * alpha
            * q
            * ((1.0 - 2.0 * bs).powf(-a) - q * (1.0 - bs).powf(-2.0 * a)
                - 2.0 * self.p * (1.0 - bs).powf(-a)
                + self.p);
        Ok(Moments::new(mean, variance))
    }
}

impl Sample for ZeroExpGammaParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.p {
            0.0
        } else {
            let g = rand_distr::Gamma::new(self.inner.a, self.inner.s)
                .expect("validated parameters");
            self.inner.transform(g.sample(rng))
        }
    }
}
