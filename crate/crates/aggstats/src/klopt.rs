//! Gradient ascent on the predicted KL divergence with respect to the FC
//! weights and the deactivation exponent, using the closed-form (eps = 0)
//! deactivation moments and their digamma-based derivatives.
//!
//! The deactivated-feature covariance matrices are treated as fixed problem
//! data: they enter the output variance but are not differentiated.

use serde::{Deserialize, Serialize};

use crate::distributions::{GaussianParams, GenGammaParams};
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::propagation::{kl_gaussian, output_gaussian, CovMatrix, FCWeights, GaussianPair};
use crate::specfun::{digamma_fn, lgamma_fn};
use crate::util::pairwise_sum;

/// Lower bound of the projected deactivation exponent.
pub const GAMMA_MIN: f64 = 0.05;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;

/// One class of the optimization problem: per-feature GAP-level Gamma
/// parameters and the fixed feature covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProblem {
    /// (a_i, s_i) of each pooled feature.
    pub gap_gamma: Vec<(f64, f64)>,
    /// Deactivated-feature covariance; only off-diagonals are used.
    pub feature_cov: CovMatrix,
}

/// Positive and negative class data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptProblem {
    pub pos: ClassProblem,
    pub neg: ClassProblem,
}

impl OptProblem {
    pub fn n_features(&self) -> usize {
        self.pos.gap_gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pos.gap_gamma.len();
        if n == 0 {
            return Err(Error::domain("OptProblem", "need at least one feature"));
        }
        if self.neg.gap_gamma.len() != n {
            return Err(Error::DimensionMismatch {
                what: "OptProblem classes",
                expected: n,
                got: self.neg.gap_gamma.len(),
            });
        }
        for class in [&self.pos, &self.neg] {
            if class.feature_cov.dim() != n {
                return Err(Error::DimensionMismatch {
                    what: "OptProblem covariance",
                    expected: n,
                    got: class.feature_cov.dim(),
                });
            }
            if class.gap_gamma.iter().any(|(a, s)| !(*a > 0.0 && *s > 0.0)) {
                return Err(Error::domain(
                    "OptProblem",
                    "feature Gamma parameters must be positive",
                ));
            }
        }
        Ok(())
    }

    /// Deactivated moments of every feature of a class at the given exponent.
    fn feature_moments(class: &ClassProblem, gamma_exp: f64) -> Result<Vec<Moments>> {
        class
            .gap_gamma
            .iter()
            .map(|&(a, s)| GenGammaParams::new(a, s, gamma_exp, 0.0)?.moments())
            .collect()
    }

    fn class_gaussian(
        class: &ClassProblem,
        weights: &FCWeights,
        gamma_exp: f64,
    ) -> Result<GaussianParams> {
        let feats = Self::feature_moments(class, gamma_exp)?;
        output_gaussian(&feats, &class.feature_cov, weights)
    }

    /// Output Gaussians of both classes.
    pub fn pair(&self, weights: &FCWeights, gamma_exp: f64) -> Result<GaussianPair> {
        Ok(GaussianPair {
            pos: Self::class_gaussian(&self.pos, weights, gamma_exp)?,
            neg: Self::class_gaussian(&self.neg, weights, gamma_exp)?,
        })
    }

    /// Predicted KL divergence at the given parameters.
    pub fn kl(&self, weights: &FCWeights, gamma_exp: f64) -> Result<f64> {
        Ok(kl_gaussian(&self.pair(weights, gamma_exp)?))
    }
}

/// Partial derivatives of the Gaussian KL with respect to its four inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPartials {
    pub d_sigma_pos: f64,
    pub d_sigma_neg: f64,
    pub d_mu_pos: f64,
    pub d_mu_neg: f64,
}

/// dK/dsigma_+ = -1/sigma_+ + sigma_+/sigma_-^2,
/// dK/dsigma_- = 1/sigma_- - (sigma_+^2 + (mu_+ - mu_-)^2)/sigma_-^3,
/// dK/dmu_+    = (mu_+ - mu_-)/sigma_-^2,
/// dK/dmu_-    = (mu_- - mu_+)/sigma_-^2.
pub fn kl_partials(pair: &GaussianPair) -> KlPartials {
    let (sp, sn) = (pair.pos.sigma, pair.neg.sigma);
    let dm = pair.pos.mu - pair.neg.mu;
    let sn2 = sn * sn;
    KlPartials {
        d_sigma_pos: -1.0 / sp + sp / sn2,
        d_sigma_neg: 1.0 / sn - (sp * sp + dm * dm) / (sn2 * sn),
        d_mu_pos: dm / sn2,
        d_mu_neg: -dm / sn2,
    }
}

/// Total derivative dK/dalpha_i for every FC weight, assembled by the chain
/// rule from per-class feature moments and the fixed feature covariances.
pub fn fc_weight_gradient(
    weights: &FCWeights,
    pos: (&[Moments], &CovMatrix),
    neg: (&[Moments], &CovMatrix),
) -> Result<Vec<f64>> {
    let n = weights.len();
    for (feats, cov) in [&pos, &neg] {
        if feats.len() != n || cov.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "fc_weight_gradient",
                expected: n,
                got: feats.len().min(cov.dim()),
            });
        }
    }
    let g_pos = output_gaussian(pos.0, pos.1, weights)?;
    let g_neg = output_gaussian(neg.0, neg.1, weights)?;
    let partials = kl_partials(&GaussianPair { pos: g_pos, neg: g_neg });

    let d_sigma = |feats: &[Moments], cov: &CovMatrix, sigma: f64, i: usize| -> f64 {
        let mut acc = weights[i] * feats[i].variance;
        for j in 0..n {
            if j != i {
                acc += weights[j] * cov.get(i, j);
            }
        }
        acc / sigma
    };

    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let d = partials.d_sigma_pos * d_sigma(pos.0, pos.1, g_pos.sigma, i)
            + partials.d_sigma_neg * d_sigma(neg.0, neg.1, g_neg.sigma, i)
            + partials.d_mu_pos * pos.0[i].mean
            + partials.d_mu_neg * neg.0[i].mean;
        grad.push(d);
    }
    Ok(grad)
}

/// Per-feature mean/variance of the deactivated Gamma and their derivatives
/// in the exponent:
/// mu = s^g Gamma(g+a)/Gamma(a), dmu/dg = mu (ln s + psi(g+a));
/// dvar/dg = s^{2g} [2 ln s (G2 - G1^2) + 2 G2 psi(a+2g) - 2 G1^2 psi(a+g)]
/// with G_k = Gamma(a + k g)/Gamma(a).
fn deact_moment_derivatives(a: f64, s: f64, gamma_exp: f64) -> Result<(Moments, f64, f64)> {
    let lg_a = lgamma_fn(a)?;
    let g1 = (lgamma_fn(a + gamma_exp)? - lg_a).exp();
    let g2 = (lgamma_fn(a + 2.0 * gamma_exp)? - lg_a).exp();
    let ln_s = s.ln();
    let sg = s.powf(gamma_exp);
    let s2g = sg * sg;
    let mean = sg * g1;
    let var = s2g * (g2 - g1 * g1);
    let d_mean = mean * (ln_s + digamma_fn(a + gamma_exp)?);
    let d_var = s2g
        * (2.0 * ln_s * (g2 - g1 * g1) + 2.0 * g2 * digamma_fn(a + 2.0 * gamma_exp)?
            - 2.0 * g1 * g1 * digamma_fn(a + gamma_exp)?);
    Ok((Moments::new(mean, var), d_mean, d_var))
}

/// Total derivative dK/dgamma over both classes, with the feature covariances
/// held fixed.
pub fn gamma_gradient(problem: &OptProblem, weights: &FCWeights, gamma_exp: f64) -> Result<f64> {
    problem.validate()?;
    let n = problem.n_features();
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            what: "gamma_gradient weights",
            expected: n,
            got: weights.len(),
        });
    }

    let mut gaussians = Vec::with_capacity(2);
    let mut d_mu = Vec::with_capacity(2);
    let mut d_sigma = Vec::with_capacity(2);
    for class in [&problem.pos, &problem.neg] {
        let mut feats = Vec::with_capacity(n);
        let mut d_mean_terms = Vec::with_capacity(n);
        let mut d_var_terms = Vec::with_capacity(n);
        for (i, &(a, s)) in class.gap_gamma.iter().enumerate() {
            let (m, dm, dv) = deact_moment_derivatives(a, s, gamma_exp)?;
            feats.push(m);
            d_mean_terms.push(weights[i] * dm);
            d_var_terms.push(weights[i] * weights[i] * dv);
        }
        let g = output_gaussian(&feats, &class.feature_cov, weights)?;
        d_mu.push(pairwise_sum(&d_mean_terms));
        d_sigma.push(pairwise_sum(&d_var_terms) / (2.0 * g.sigma));
        gaussians.push(g);
    }

    let pair = GaussianPair {
        pos: gaussians[0],
        neg: gaussians[1],
    };
    let partials = kl_partials(&pair);
    Ok(partials.d_mu_pos * d_mu[0]
        + partials.d_sigma_pos * d_sigma[0]
        + partials.d_mu_neg * d_mu[1]
        + partials.d_sigma_neg * d_sigma[1])
}

/// State of the gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub weights: FCWeights,
    pub gamma_exp: f64,
    pub step_size: f64,
    pub iteration: usize,
    pub kl_history: Vec<f64>,
}

impl OptState {
    pub fn new(weights: FCWeights, gamma_exp: f64, step_size: f64) -> Result<Self> {
        if !(gamma_exp > 0.0 && gamma_exp <= 1.0) {
            return Err(Error::domain(
                "OptState",
                format!("deactivation power must lie in (0, 1], got {gamma_exp}"),
            ));
        }
        if !(step_size > 0.0) {
            return Err(Error::domain(
                "OptState",
                format!("step size must be positive, got {step_size}"),
            ));
        }
        Ok(OptState {
            weights,
            gamma_exp,
            step_size,
            iteration: 0,
            kl_history: Vec::new(),
        })
    }
}

/// Backtracking-line-search gradient ascent on the predicted KL.
///
/// Terminates when the projected gradient norm drops below `tol`, after
/// `max_iters` accepted steps, or when no improving step exists. The exponent
/// is projected into [GAMMA_MIN, 1]. KL strictly increases on every accepted
/// step.
pub fn ascend(
    problem: &OptProblem,
    init: OptState,
    max_iters: usize,
    tol: f64,
) -> Result<OptState> {
    problem.validate()?;
    let mut state = init;
    let mut kl = problem
        .kl(&state.weights, state.gamma_exp)
        .map_err(|e| Error::OptAborted {
            iteration: state.iteration,
            source: Box::new(e),
        })?;
    if state.kl_history.is_empty() {
        state.kl_history.push(kl);
    }

    for _ in 0..max_iters {
        let grad_w = fc_weight_gradient(
            &state.weights,
            (
                &OptProblem::feature_moments(&problem.pos, state.gamma_exp)?,
                &problem.pos.feature_cov,
            ),
            (
                &OptProblem::feature_moments(&problem.neg, state.gamma_exp)?,
                &problem.neg.feature_cov,
            ),
        )
        .map_err(|e| Error::OptAborted {
            iteration: state.iteration,
            source: Box::new(e),
        })?;
        let grad_g = gamma_gradient(problem, &state.weights, state.gamma_exp).map_err(|e| {
            Error::OptAborted {
                iteration: state.iteration,
                source: Box::new(e),
            }
        })?;

        // Project the exponent gradient at the box boundary.
        let at_hi = state.gamma_exp >= 1.0 && grad_g > 0.0;
        let at_lo = state.gamma_exp <= GAMMA_MIN && grad_g < 0.0;
        let eff_g = if at_hi || at_lo { 0.0 } else { grad_g };
        let norm2: f64 = grad_w.iter().map(|g| g * g).sum::<f64>() + eff_g * eff_g;
        if norm2.sqrt() < tol {
            break;
        }

        let mut t = state.step_size;
        let mut accepted = false;
        while t >= MIN_STEP {
            let w_new: Vec<f64> = state
                .weights
                .as_slice()
                .iter()
                .zip(&grad_w)
                .map(|(w, g)| w + t * g)
                .collect();
            let g_new = (state.gamma_exp + t * grad_g).clamp(GAMMA_MIN, 1.0);
            let weights_new = FCWeights::new(w_new)?;
            let gain: f64 = grad_w
                .iter()
                .zip(weights_new.as_slice().iter().zip(state.weights.as_slice()))
                .map(|(g, (wn, wo))| g * (wn - wo))
                .sum::<f64>()
                + grad_g * (g_new - state.gamma_exp);
            if gain <= 0.0 {
                break;
            }
            match problem.kl(&weights_new, g_new) {
                Ok(k_new) if k_new - kl >= ARMIJO * gain => {
                    state.weights = weights_new;
                    state.gamma_exp = g_new;
                    state.iteration += 1;
                    kl = k_new;
                    state.kl_history.push(kl);
                    state.step_size = (t * 2.0).min(1e3);
                    accepted = true;
                    break;
                }
                // Insufficient increase or a trial step outside the domain:
                // shrink and retry.
                Ok(_) | Err(_) => t *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(state)
}
