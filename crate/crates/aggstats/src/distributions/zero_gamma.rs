//! Mixture of a point mass at zero and a Gamma density on positive values.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::specfun::{lgamma_fn, reg_lower_incomplete_gamma};

/// Parameters of the zero-Gamma mixture: mass `p` at exactly zero, Gamma
/// shape `a` and scale `s` for the positive part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroGammaParams {
    pub p: f64,
    pub a: f64,
    pub s: f64,
}

impl ZeroGammaParams {
    pub fn new(p: f64, a: f64, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(
                "ZeroGammaParams",
                format!("zero mass must lie in [0, 1], got {p}"),
            ));
        }
        if !(a > 0.0) || !(s > 0.0) {
            return Err(Error::domain(
                "ZeroGammaParams",
                format!("shape and scale must be positive, got a = {a}, s = {s}"),
            ));
        }
        Ok(ZeroGammaParams { p, a, s })
    }

    /// Probability of drawing exactly zero.
    pub fn point_mass(&self) -> f64 {
        self.p
    }

    /// Density of the continuous part, carrying the (1 - p) weight.
    /// Zero at x = 0 by convention; the point mass is reported separately.
    pub fn density(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(Error::domain(
                "zero_gamma_pdf",
                format!("support is [0, inf), got {x}"),
            ));
        }
        if x == 0.0 || self.p == 1.0 {
            return Ok(0.0);
        }
        let ln_pdf = (self.a - 1.0) * x.ln() - x / self.s
            - lgamma_fn(self.a)?
            - self.a * self.s.ln();
        Ok((1.0 - self.p) * ln_pdf.exp())
    }

    /// CDF of the mixture (point mass included).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        let cont = reg_lower_incomplete_gamma(self.a, x / self.s)?;
        Ok(self.p + (1.0 - self.p) * cont)
    }

    /// mean = (1 - p) a s, variance = (1 - p) a s^2 (1 + a p).
    pub fn moments(&self) -> Moments {
        let mean = (1.0 - self.p) * self.a * self.s;
        let variance = (1.0 - self.p) * self.a * self.s * self.s * (1.0 + self.a * self.p);
        Moments::new(mean, variance)
    }

    /// Quantile of the mixture: q <= p maps to exactly zero.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::domain(
                "zero_gamma_quantile",
                format!("probability must lie in [0, 1), got {q}"),
            ));
        }
        if q <= self.p {
            return Ok(0.0);
        }
        let qc = (q - self.p) / (1.0 - self.p);
        Ok(self.s * crate::specfun::gamma_quantile(self.a, qc)?)
    }

    pub(crate) fn gamma_sampler(&self) -> rand_distr::Gamma<f64> {
        rand_distr::Gamma::new(self.a, self.s).expect("validated parameters")
    }
}

impl Sample for ZeroGammaParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Bernoulli draw first so the stream layout is stable.
        let u: f64 = rng.random();
        if u < self.p {
            0.0
        } else {
            self.gamma_sampler().sample(rng)
        }
    }
}
