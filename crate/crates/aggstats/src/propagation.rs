//! Analytic moment and covariance propagation through the aggregation block:
//! exponential activation, global average pooling, Gamma moment-matching,
//! power deactivation and the fully connected output node, ending in the
//! closed-form KL divergence between class-conditional output Gaussians.
//!
//! All sums over pixels and features use pairwise summation in a fixed order,
//! so results do not depend on evaluation schedule.

use serde::{Deserialize, Serialize};

use crate::distributions::{ExpGammaParams, GaussianParams, GenGammaParams, ZeroExpGammaParams, ZeroGammaParams};
use crate::error::{Error, Result};
use crate::moments::Moments;
use crate::util::pairwise_sum;

/// Dense symmetric covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl CovMatrix {
    pub fn zeros(dim: usize) -> Self {
        CovMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Build from a dense row-major buffer, enforcing symmetry (1e-12 on the
    /// largest entry) and a non-negative diagonal.
    pub fn from_dense(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                what: "CovMatrix::from_dense",
                expected: dim * dim,
                got: data.len(),
            });
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..dim {
            if data[i * dim + i] < 0.0 {
                return Err(Error::NegativeVariance {
                    context: "CovMatrix diagonal",
                    value: data[i * dim + i],
                });
            }
            for j in (i + 1)..dim {
                if (data[i * dim + j] - data[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::domain(
                        "CovMatrix::from_dense",
                        format!("asymmetric entry at ({i}, {j})"),
                    ));
                }
            }
        }
        Ok(CovMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Set both (i, j) and (j, i).
    pub fn set_sym(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy with every off-diagonal entry zeroed.
    pub fn diagonal_only(&self) -> Self {
        let mut out = CovMatrix::zeros(self.dim);
        for i in 0..self.dim {
            out.set_sym(i, i, self.get(i, i));
        }
        out
    }
}

/// Parameters of the nonlinear block: scaled exponential activation
/// g(x) = alpha (e^{beta x} - 1), pooling over `r_pixels` positions, and the
/// deactivation (x + eps)^gamma_exp. `identity_activation` switches the
/// activation to g(x) = x for plain average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_exp: f64,
    pub eps: f64,
    pub r_pixels: usize,
    #[serde(default)]
    pub identity_activation: bool,
}

impl ActivationConfig {
    pub fn new(alpha: f64, beta: f64, gamma_exp: f64, eps: f64, r_pixels: usize) -> Result<Self> {
        let cfg = ActivationConfig {
            alpha,
            beta,
            gamma_exp,
            eps,
            r_pixels,
            identity_activation: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::domain(
                "ActivationConfig",
                format!(
                    "activation scale and rate must be positive, got alpha = {}, beta = {}",
                    self.alpha, self.beta
                ),
            ));
        }
        if !(self.gamma_exp > 0.0 && self.gamma_exp <= 1.0) {
            return Err(Error::domain(
                "ActivationConfig",
                format!("deactivation power must lie in (0, 1], got {}", self.gamma_exp),
            ));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::domain(
                "ActivationConfig",
                format!("shift must be non-negative, got {}", self.eps),
            ));
        }
        if self.r_pixels == 0 {
            return Err(Error::domain("ActivationConfig", "pooling count must be >= 1"));
        }
        Ok(())
    }

    /// Apply the activation to a scalar.
    pub fn activate(&self, x: f64) -> f64 {
        if self.identity_activation {
            x
        } else {
            self.alpha * (self.beta * x).exp_m1()
        }
    }

    /// Apply the deactivation to a pooled value.
    pub fn deactivate(&self, x: f64) -> f64 {
        (x + self.eps).powf(self.gamma_exp)
    }
}

/// Value and first two derivatives of the activation at x = 0, plus the
/// coefficients of the expanded product g(x_i) g(x_j).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taylor2 {
    pub g0: f64,
    pub dg0: f64,
    pub d2g0: f64,
}

impl Taylor2 {
    /// Product-expansion constants A = g(0) g'(0), B = g'(0)^2,
    /// C = g'(0) g''(0) / 2, D = g''(0)^2 / 4.
    pub fn product_coeffs(&self) -> (f64, f64, f64, f64) {
        (
            self.g0 * self.dg0,
            self.dg0 * self.dg0,
            0.5 * self.dg0 * self.d2g0,
            0.25 * self.d2g0 * self.d2g0,
        )
    }

    /// Second-order mean approximation g(0) + g'(0) E[W] + g''(0)/2 E[W^2].
    pub fn mean_approx(&self, e1: f64, e2: f64) -> f64 {
        self.g0 + self.dg0 * e1 + 0.5 * self.d2g0 * e2
    }
}

/// Second-order Taylor data of the configured activation at x = 0.
/// For g(x) = alpha (e^{beta x} - 1): g(0) = 0, g'(0) = alpha beta,
/// g''(0) = alpha beta^2.
pub fn taylor2_coeffs(cfg: &ActivationConfig) -> Taylor2 {
    if cfg.identity_activation {
        Taylor2 {
            g0: 0.0,
            dg0: 1.0,
            d2g0: 0.0,
        }
    } else {
        Taylor2 {
            g0: 0.0,
            dg0: cfg.alpha * cfg.beta,
            d2g0: cfg.alpha * cfg.beta * cfg.beta,
        }
    }
}

/// First and second cross-moments of the R conv-layer pixels of one filter:
/// E[W_i], E[W_i^2], and the tables E[W_i W_j], E[W_i^2 W_j], E[W_i^2 W_j^2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    r: usize,
    m1: Vec<f64>,
    m2: Vec<f64>,
    m11: Vec<f64>,
    m21: Vec<f64>,
    m22: Vec<f64>,
}

impl PixelStats {
    pub fn new(
        r: usize,
        m1: Vec<f64>,
        m2: Vec<f64>,
        m11: Vec<f64>,
        m21: Vec<f64>,
        m22: Vec<f64>,
    ) -> Result<Self> {
        if m1.len() != r || m2.len() != r {
            return Err(Error::DimensionMismatch {
                what: "PixelStats first moments",
                expected: r,
                got: m1.len().min(m2.len()),
            });
        }
        for t in [&m11, &m21, &m22] {
            if t.len() != r * r {
                return Err(Error::DimensionMismatch {
                    what: "PixelStats cross-moment table",
                    expected: r * r,
                    got: t.len(),
                });
            }
        }
        for i in 0..r {
            if m2[i] < m1[i] * m1[i] - 1e-9 * m2[i].abs().max(1.0) {
                return Err(Error::domain(
                    "PixelStats",
                    format!("E[W^2] < E[W]^2 at pixel {i}"),
                ));
            }
        }
        Ok(PixelStats {
            r,
            m1,
            m2,
            m11,
            m21,
            m22,
        })
    }

    /// Stats of R pixels with identical marginal moments and factorized
    /// (independent) cross moments.
    pub fn independent(r: usize, e1: f64, e2: f64) -> Self {
        let mut m11 = vec![e1 * e1; r * r];
        let mut m21 = vec![e2 * e1; r * r];
        let mut m22 = vec![e2 * e2; r * r];
        for i in 0..r {
            m11[i * r + i] = e2;
            // diagonal entries are pure marginal moments E[W^3], E[W^4];
            // unused by the propagation formulas but kept consistent for
            // stats built from product moments
            m21[i * r + i] = e2 * e1;
            m22[i * r + i] = e2 * e2;
        }
        PixelStats {
            r,
            m1: vec![e1; r],
            m2: vec![e2; r],
            m11,
            m21,
            m22,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.r
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.r || j >= self.r {
            return Err(Error::MissingMoment(format!(
                "pixel pair ({i}, {j}) outside table of {} pixels",
                self.r
            )));
        }
        Ok(())
    }

    pub fn e1(&self, i: usize) -> f64 {
        self.m1[i]
    }

    pub fn e2(&self, i: usize) -> f64 {
        self.m2[i]
    }

    pub fn e11(&self, i: usize, j: usize) -> f64 {
        self.m11[i * self.r + j]
    }

    /// E[W_i^2 W_j].
    pub fn e21(&self, i: usize, j: usize) -> f64 {
        self.m21[i * self.r + j]
    }

    /// E[W_i W_j^2] via table exchange symmetry.
    pub fn e12(&self, i: usize, j: usize) -> f64 {
        self.m21[j * self.r + i]
    }

    pub fn e22(&self, i: usize, j: usize) -> f64 {
        self.m22[i * self.r + j]
    }

    /// View this filter's table as a same-filter cross table (the i = j case
    /// of the GAP feature covariance).
    pub fn to_cross(&self) -> CrossPixelStats {
        let r = self.r;
        let mut e12 = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                e12[i * r + j] = self.e12(i, j);
            }
        }
        CrossPixelStats {
            r,
            left_m1: self.m1.clone(),
            left_m2: self.m2.clone(),
            right_m1: self.m1.clone(),
            right_m2: self.m2.clone(),
            e11: self.m11.clone(),
            e21: self.m21.clone(),
            e12,
            e22: self.m22.clone(),
        }
    }
}

/// Cross-moment tables between pixels of two different filters:
/// E[U_k^a W_l^b] for a, b in {1, 2}, with U from the left filter and W from
/// the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPixelStats {
    r: usize,
    pub left_m1: Vec<f64>,
    pub left_m2: Vec<f64>,
    pub right_m1: Vec<f64>,
    pub right_m2: Vec<f64>,
    /// E[U_k W_l]
    pub e11: Vec<f64>,
    /// E[U_k^2 W_l]
    pub e21: Vec<f64>,
    /// E[U_k W_l^2]
    pub e12: Vec<f64>,
    /// E[U_k^2 W_l^2]
    pub e22: Vec<f64>,
}

impl CrossPixelStats {
    pub fn new(
        r: usize,
        left_m1: Vec<f64>,
        left_m2: Vec<f64>,
        right_m1: Vec<f64>,
        right_m2: Vec<f64>,
        e11: Vec<f64>,
        e21: Vec<f64>,
        e12: Vec<f64>,
        e22: Vec<f64>,
    ) -> Result<Self> {
        for v in [&left_m1, &left_m2, &right_m1, &right_m2] {
            if v.len() != r {
                return Err(Error::DimensionMismatch {
                    what: "CrossPixelStats marginals",
                    expected: r,
                    got: v.len(),
                });
            }
        }
        for t in [&e11, &e21, &e12, &e22] {
            if t.len() != r * r {
                return Err(Error::DimensionMismatch {
                    what: "CrossPixelStats tables",
                    expected: r * r,
                    got: t.len(),
                });
            }
        }
        Ok(CrossPixelStats {
            r,
            left_m1,
            left_m2,
            right_m1,
            right_m2,
            e11,
            e21,
            e12,
            e22,
        })
    }

    /// Independent filters: every cross table factorizes into products of
    /// marginal moments.
    pub fn independent(r: usize, left: (&[f64], &[f64]), right: (&[f64], &[f64])) -> Self {
        let mut e11 = vec![0.0; r * r];
        let mut e21 = vec![0.0; r * r];
        let mut e12 = vec![0.0; r * r];
        let mut e22 = vec![0.0; r * r];
        for k in 0..r {
            for l in 0..r {
                e11[k * r + l] = left.0[k] * right.0[l];
                e21[k * r + l] = left.1[k] * right.0[l];
                e12[k * r + l] = left.0[k] * right.1[l];
                e22[k * r + l] = left.1[k] * right.1[l];
            }
        }
        CrossPixelStats {
            r,
            left_m1: left.0.to_vec(),
            left_m2: left.1.to_vec(),
            right_m1: right.0.to_vec(),
            right_m2: right.1.to_vec(),
            e11,
            e21,
            e12,
            e22,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.r
    }
}

/// Second-order approximation of E[X_i X_j] for activated pixels of one
/// filter:
/// g(0)^2 + A (E[W_i] + E[W_j]) + B E[W_i W_j]
///   + C (E[W_i^2 W_j] + E[W_i W_j^2]) + D E[W_i^2 W_j^2].
pub fn activated_cross_expectation(
    stats: &PixelStats,
    cfg: &ActivationConfig,
    i: usize,
    j: usize,
) -> Result<f64> {
    stats.check(i, j)?;
    let t = taylor2_coeffs(cfg);
    let (a, b, c, d) = t.product_coeffs();
    Ok(t.g0 * t.g0
        + a * (stats.e1(i) + stats.e1(j))
        + b * stats.e11(i, j)
        + c * (stats.e21(i, j) + stats.e12(i, j))
        + d * stats.e22(i, j))
}

/// R x R covariance matrix of the activated pixels of one filter, built from
/// the second-order cross expectations and the matching second-order means.
pub fn pixel_cov_matrix(stats: &PixelStats, cfg: &ActivationConfig) -> Result<CovMatrix> {
    let r = stats.n_pixels();
    let t = taylor2_coeffs(cfg);
    let means: Vec<f64> = (0..r).map(|i| t.mean_approx(stats.e1(i), stats.e2(i))).collect();
    let mut cov = CovMatrix::zeros(r);
    for i in 0..r {
        for j in i..r {
            let e = activated_cross_expectation(stats, cfg, i, j)?;
            cov.set_sym(i, j, e - means[i] * means[j]);
        }
    }
    Ok(cov)
}

/// Moments of the pooled (GAP) feature: the mean is unchanged, the variance
/// is sigma^2 / R plus the off-diagonal covariance sum scaled by 1/R^2.
pub fn gap_moments(act_moments: Moments, cov: &CovMatrix, r_pixels: usize) -> Result<Moments> {
    if cov.dim() != r_pixels {
        return Err(Error::DimensionMismatch {
            what: "gap_moments covariance",
            expected: r_pixels,
            got: cov.dim(),
        });
    }
    let r = r_pixels as f64;
    let mut off = Vec::with_capacity(r_pixels * r_pixels.saturating_sub(1));
    for i in 0..r_pixels {
        for j in 0..r_pixels {
            if i != j {
                off.push(cov.get(i, j));
            }
        }
    }
    let variance = act_moments.variance / r + pairwise_sum(&off) / (r * r);
    if variance < 0.0 {
        return Err(Error::NegativeVariance {
            context: "gap_moments",
            value: variance,
        });
    }
    Ok(Moments::new(act_moments.mean, variance))
}

/// Match a Gamma distribution to the given moments:
/// s = variance / mean, a = mean^2 / variance.
pub fn match_gamma(m: Moments) -> Result<(f64, f64)> {
    if !(m.mean > 0.0) || !(m.variance > 0.0) {
        return Err(Error::domain(
            "match_gamma",
            format!(
                "moment matching needs positive mean and variance, got mean = {}, variance = {}",
                m.mean, m.variance
            ),
        ));
    }
    let s = m.variance / m.mean;
    let a = m.mean * m.mean / m.variance;
    Ok((a, s))
}

/// Covariance between two GAP features, from the second-order expansion of
/// E[g(U) g(W)] summed over all pixel pairs of the two filters.
pub fn gap_feature_cov(cross: &CrossPixelStats, cfg: &ActivationConfig) -> Result<f64> {
    let r = cross.n_pixels();
    let t = taylor2_coeffs(cfg);
    let (a, b, c) = (t.g0, t.dg0, 0.5 * t.d2g0);

    let mu_left = pairwise_sum(
        &(0..r)
            .map(|k| t.mean_approx(cross.left_m1[k], cross.left_m2[k]))
            .collect::<Vec<_>>(),
    ) / r as f64;
    let mu_right = pairwise_sum(
        &(0..r)
            .map(|k| t.mean_approx(cross.right_m1[k], cross.right_m2[k]))
            .collect::<Vec<_>>(),
    ) / r as f64;

    let mut terms = Vec::with_capacity(r * r);
    for k in 0..r {
        for l in 0..r {
            let idx = k * r + l;
            let e = a * a
                + a * b * (cross.left_m1[k] + cross.right_m1[l])
                + a * c * (cross.left_m2[k] + cross.right_m2[l])
                + b * b * cross.e11[idx]
                + b * c * (cross.e21[idx] + cross.e12[idx])
                + c * c * cross.e22[idx];
            terms.push(e);
        }
    }
    Ok(pairwise_sum(&terms) / (r as f64 * r as f64) - mu_left * mu_right)
}

/// Covariance of two deactivated features from their GAP covariance.
///
/// The first-order expansion of (x + eps)^gamma at x = eps has slope
/// d = gamma (2 eps)^{gamma - 1}; the constant terms cancel in the
/// covariance, leaving Cov_D = d^2 Cov_G.
pub fn deact_cov(cov_g: f64, gamma_exp: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(
            "deact_cov",
            format!("first-order deactivation covariance needs eps > 0, got {eps}"),
        ));
    }
    let d = gamma_exp * (2.0 * eps).powf(gamma_exp - 1.0);
    Ok(d * d * cov_g)
}

/// Weights of the fully connected output node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FCWeights(Vec<f64>);

impl FCWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("FCWeights", "need at least one weight"));
        }
        Ok(FCWeights(weights))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for FCWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Output Gaussians of the positive and negative class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub pos: GaussianParams,
    pub neg: GaussianParams,
}

/// Gaussian of the FC output node: mu = sum_i alpha_i mu_i,
/// sigma^2 = sum_i alpha_i^2 sigma_i^2 + 2 sum_{i<j} alpha_i alpha_j Cov(i, j).
pub fn output_gaussian(
    feat_moments: &[Moments],
    cov: &CovMatrix,
    weights: &FCWeights,
) -> Result<GaussianParams> {
    let n = feat_moments.len();
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            what: "output_gaussian weights",
            expected: n,
            got: weights.len(),
        });
    }
    if cov.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "output_gaussian covariance",
            expected: n,
            got: cov.dim(),
        });
    }
    let mean_terms: Vec<f64> = (0..n).map(|i| weights[i] * feat_moments[i].mean).collect();
    let mut var_terms: Vec<f64> = (0..n)
        .map(|i| weights[i] * weights[i] * feat_moments[i].variance)
        .collect();
    for i in 0..n {
        for j in (i + 1)..n {
            var_terms.push(2.0 * weights[i] * weights[j] * cov.get(i, j));
        }
    }
    let variance = pairwise_sum(&var_terms);
    if !(variance > 0.0) {
        return Err(Error::NonPositiveOutputVariance { value: variance });
    }
    GaussianParams::new(pairwise_sum(&mean_terms), variance.sqrt())
}

/// KL divergence K(p_+ || p_-) of two Gaussians:
/// ln sigma_- - ln sigma_+ + (sigma_+^2 + (mu_+ - mu_-)^2) / (2 sigma_-^2) - 1/2.
pub fn kl_gaussian(pair: &GaussianPair) -> f64 {
    let dm = pair.pos.mu - pair.neg.mu;
    let s2n = pair.neg.sigma * pair.neg.sigma;
    pair.neg.sigma.ln() - pair.pos.sigma.ln()
        + (pair.pos.sigma * pair.pos.sigma + dm * dm) / (2.0 * s2n)
        - 0.5
}

/// Per-filter pixel statistics plus the cross-filter tables needed for the
/// GAP feature covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    per_filter: Vec<PixelStats>,
    /// Upper-triangular (i < j) cross tables in row-major pair order.
    cross: Vec<CrossPixelStats>,
}

impl BlockStats {
    pub fn new(per_filter: Vec<PixelStats>, cross: Vec<CrossPixelStats>) -> Result<Self> {
        let f = per_filter.len();
        let expected = f * f.saturating_sub(1) / 2;
        if cross.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "BlockStats cross tables",
                expected,
                got: cross.len(),
            });
        }
        let r = per_filter.first().map(|s| s.n_pixels()).unwrap_or(0);
        if per_filter.iter().any(|s| s.n_pixels() != r)
            || cross.iter().any(|c| c.n_pixels() != r)
        {
            return Err(Error::domain(
                "BlockStats",
                "all filters must share the same pixel count",
            ));
        }
        Ok(BlockStats { per_filter, cross })
    }

    pub fn n_filters(&self) -> usize {
        self.per_filter.len()
    }

    pub fn filter(&self, f: usize) -> &PixelStats {
        &self.per_filter[f]
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        let f = self.per_filter.len();
        debug_assert!(i < j && j < f);
        i * f - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn cross(&self, i: usize, j: usize) -> &CrossPixelStats {
        &self.cross[self.pair_index(i, j)]
    }
}

/// Every intermediate of the analytic chain, for inspection and comparison
/// against observed statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPrediction {
    /// Zero-Gamma moments of the conv-layer pixels, per filter.
    pub conv: Vec<Moments>,
    /// Moments after the nonlinear activation, per filter.
    pub activated: Vec<Moments>,
    /// Moments of the pooled features, per filter.
    pub gap: Vec<Moments>,
    /// Matched Gamma parameters (a, s) of each pooled feature.
    pub gap_gamma: Vec<(f64, f64)>,
    /// Moments after deactivation, per filter.
    pub deactivated: Vec<Moments>,
    /// Covariance of the pooled features (diagonal holds the GAP variances).
    pub gap_cov: CovMatrix,
    /// Covariance of the deactivated features.
    pub deact_cov: CovMatrix,
    /// Gaussian of the FC output node.
    pub output: GaussianParams,
}

/// Run the full analytic chain for one class: activation moments, pixel
/// covariance, pooling, Gamma matching, deactivation and the output Gaussian.
pub fn predict_block(
    filters: &[ZeroGammaParams],
    stats: &BlockStats,
    cfg: &ActivationConfig,
    weights: &FCWeights,
) -> Result<BlockPrediction> {
    cfg.validate()?;
    let n = filters.len();
    if stats.n_filters() != n {
        return Err(Error::DimensionMismatch {
            what: "predict_block stats",
            expected: n,
            got: stats.n_filters(),
        });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            what: "predict_block weights",
            expected: n,
            got: weights.len(),
        });
    }
    for f in 0..n {
        if stats.filter(f).n_pixels() != cfg.r_pixels {
            return Err(Error::DimensionMismatch {
                what: "predict_block pixel count",
                expected: cfg.r_pixels,
                got: stats.filter(f).n_pixels(),
            });
        }
    }

    let conv: Vec<Moments> = filters.iter().map(|p| p.moments()).collect();

    let activated = activation_moments(filters, cfg).map_err(|e| e.at_layer("activation"))?;

    let mut gap = Vec::with_capacity(n);
    for f in 0..n {
        let cov_s =
            pixel_cov_matrix(stats.filter(f), cfg).map_err(|e| e.at_layer("pixel-covariance"))?;
        gap.push(
            gap_moments(activated[f], &cov_s, cfg.r_pixels).map_err(|e| e.at_layer("gap"))?,
        );
    }

    let mut gap_gamma = Vec::with_capacity(n);
    for m in &gap {
        gap_gamma.push(match_gamma(*m).map_err(|e| e.at_layer("moment-matching"))?);
    }

    let mut deactivated = Vec::with_capacity(n);
    for &(a, s) in &gap_gamma {
        let d = GenGammaParams::new(a, s, cfg.gamma_exp, cfg.eps)
            .and_then(|d| d.moments())
            .map_err(|e| e.at_layer("deactivation"))?;
        deactivated.push(d);
    }

    let mut gap_cov = CovMatrix::zeros(n);
    for f in 0..n {
        gap_cov.set_sym(f, f, gap[f].variance);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let c = gap_feature_cov(stats.cross(i, j), cfg)
                .map_err(|e| e.at_layer("gap-covariance"))?;
            gap_cov.set_sym(i, j, c);
        }
    }

    let deact_cov_mat = deactivated_cov_matrix(&gap_cov, &deactivated, cfg)?;

    let output = output_gaussian(&deactivated, &deact_cov_mat, weights)
        .map_err(|e| e.at_layer("output"))?;

    Ok(BlockPrediction {
        conv,
        activated,
        gap,
        gap_gamma,
        deactivated,
        gap_cov,
        deact_cov: deact_cov_mat,
        output,
    })
}

/// The analytic chain under the independence assumption: no pixel or feature
/// covariance terms. Needs only the fitted zero-Gamma parameters.
pub fn predict_block_independent(
    filters: &[ZeroGammaParams],
    cfg: &ActivationConfig,
    weights: &FCWeights,
) -> Result<BlockPrediction> {
    cfg.validate()?;
    let n = filters.len();
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            what: "predict_block weights",
            expected: n,
            got: weights.len(),
        });
    }
    let conv: Vec<Moments> = filters.iter().map(|p| p.moments()).collect();
    let activated = activation_moments(filters, cfg).map_err(|e| e.at_layer("activation"))?;
    let zero_cov = CovMatrix::zeros(cfg.r_pixels);
    let mut gap = Vec::with_capacity(n);
    for f in 0..n {
        gap.push(
            gap_moments(activated[f], &zero_cov, cfg.r_pixels).map_err(|e| e.at_layer("gap"))?,
        );
    }
    let mut gap_gamma = Vec::with_capacity(n);
    for m in &gap {
        gap_gamma.push(match_gamma(*m).map_err(|e| e.at_layer("moment-matching"))?);
    }
    let mut deactivated = Vec::with_capacity(n);
    for &(a, s) in &gap_gamma {
        let d = GenGammaParams::new(a, s, cfg.gamma_exp, cfg.eps)
            .and_then(|d| d.moments())
            .map_err(|e| e.at_layer("deactivation"))?;
        deactivated.push(d);
    }
    let mut gap_cov = CovMatrix::zeros(n);
    for f in 0..n {
        gap_cov.set_sym(f, f, gap[f].variance);
    }
    let deact_cov_mat = deactivated_cov_matrix(&gap_cov, &deactivated, cfg)?;
    let output = output_gaussian(&deactivated, &deact_cov_mat, weights)
        .map_err(|e| e.at_layer("output"))?;
    Ok(BlockPrediction {
        conv,
        activated,
        gap,
        gap_gamma,
        deactivated,
        gap_cov,
        deact_cov: deact_cov_mat,
        output,
    })
}

fn activation_moments(filters: &[ZeroGammaParams], cfg: &ActivationConfig) -> Result<Vec<Moments>> {
    filters
        .iter()
        .map(|p| {
            if cfg.identity_activation {
                Ok(p.moments())
            } else {
                ZeroExpGammaParams::new(
                    p.p,
                    ExpGammaParams::new(p.a, p.s, cfg.alpha, cfg.beta)?,
                )?
                .moments()
            }
        })
        .collect()
}

/// Map the GAP feature covariance to the deactivated covariance. The diagonal
/// holds the deactivated variances; off-diagonals use the first-order slope.
/// With eps = 0 the slope only exists for gamma = 1 (identity) or when the
/// GAP covariance is exactly zero.
fn deactivated_cov_matrix(
    gap_cov: &CovMatrix,
    deactivated: &[Moments],
    cfg: &ActivationConfig,
) -> Result<CovMatrix> {
    let n = deactivated.len();
    let mut out = CovMatrix::zeros(n);
    for f in 0..n {
        out.set_sym(f, f, deactivated[f].variance);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let g = gap_cov.get(i, j);
            let c = if cfg.eps > 0.0 {
                deact_cov(g, cfg.gamma_exp, cfg.eps).map_err(|e| e.at_layer("deactivation-covariance"))?
            } else if cfg.gamma_exp == 1.0 || g == 0.0 {
                g
            } else {
                return Err(Error::domain(
                    "deact_cov",
                    "nonzero GAP covariance with eps = 0 and gamma < 1; set eps > 0",
                )
                .at_layer("deactivation-covariance"));
            };
            out.set_sym(i, j, c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_cfg(alpha: f64, beta: f64, r: usize) -> ActivationConfig {
        ActivationConfig::new(alpha, beta, 1.0, 0.0, r).unwrap()
    }

    #[test]
    fn taylor_coeffs_of_scaled_exp() {
        let t = taylor2_coeffs(&exp_cfg(1.0, 0.01, 4));
        assert_eq!(t.g0, 0.0);
        assert_relative_eq!(t.dg0, 0.01, epsilon = 1e-15);
        assert_relative_eq!(t.d2g0, 1e-4, epsilon = 1e-18);
        let (a, b, _, _) = t.product_coeffs();
        assert_eq!(a, 0.0);
        assert_relative_eq!(b, 1e-4, epsilon = 1e-18);

        let t = taylor2_coeffs(&exp_cfg(8.0, 0.1, 4));
        assert_relative_eq!(t.dg0, 0.8, epsilon = 1e-15);
        assert_relative_eq!(t.d2g0, 0.08, epsilon = 1e-15);
    }

    #[test]
    fn taylor_derivatives_match_finite_differences() {
        let cfg = exp_cfg(2.0, 0.3, 4);
        let t = taylor2_coeffs(&cfg);
        let h = 1e-5;
        let fd1 = (cfg.activate(h) - cfg.activate(-h)) / (2.0 * h);
        let fd2 = (cfg.activate(h) - 2.0 * cfg.activate(0.0) + cfg.activate(-h)) / (h * h);
        assert_relative_eq!(t.dg0, fd1, max_relative = 1e-6);
        assert_relative_eq!(t.d2g0, fd2, max_relative = 1e-5);
    }

    #[test]
    fn identity_cross_expectation_is_second_moment() {
        let mut cfg = exp_cfg(1.0, 0.5, 3);
        cfg.identity_activation = true;
        let stats = PixelStats::independent(3, 1.5, 3.0);
        let e = activated_cross_expectation(&stats, &cfg, 1, 1).unwrap();
        assert_relative_eq!(e, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn out_of_range_pixel_is_missing_moment() {
        let cfg = exp_cfg(1.0, 0.1, 3);
        let stats = PixelStats::independent(3, 1.0, 2.0);
        assert!(matches!(
            activated_cross_expectation(&stats, &cfg, 0, 5),
            Err(Error::MissingMoment(_))
        ));
    }

    #[test]
    fn identity_cov_matrix_on_independent_stats_is_diagonal() {
        let mut cfg = exp_cfg(1.0, 0.5, 4);
        cfg.identity_activation = true;
        let stats = PixelStats::independent(4, 2.0, 5.0);
        let cov = pixel_cov_matrix(&stats, &cfg).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    assert_relative_eq!(cov.get(i, j), 1.0, epsilon = 1e-13);
                } else {
                    assert_relative_eq!(cov.get(i, j), 0.0, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn gap_variance_shrinks_like_one_over_r() {
        let act = Moments::new(2.0, 4.0);
        let m = gap_moments(act, &CovMatrix::zeros(16), 16).unwrap();
        assert_relative_eq!(m.mean, 2.0, epsilon = 1e-15);
        assert_relative_eq!(m.variance, 0.25, epsilon = 1e-15);
        let m1 = gap_moments(act, &CovMatrix::zeros(1), 1).unwrap();
        assert_eq!(m1, act);
    }

    #[test]
    fn match_gamma_round_trip() {
        let (a, s) = match_gamma(Moments::new(6.0, 12.0)).unwrap();
        assert_relative_eq!(a, 3.0, epsilon = 1e-14);
        assert_relative_eq!(s, 2.0, epsilon = 1e-14);
        let (a, s) = match_gamma(Moments::new(1.0, 1.0)).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
        assert!(match_gamma(Moments::new(-1.0, 1.0)).is_err());
        assert!(match_gamma(Moments::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn independent_filters_have_zero_gap_cov() {
        let cfg = exp_cfg(1.0, 0.2, 4);
        let left = (vec![1.0, 1.1, 0.9, 1.0], vec![2.0, 2.2, 1.9, 2.0]);
        let right = (vec![0.5, 0.6, 0.5, 0.4], vec![0.7, 0.9, 0.8, 0.6]);
        let cross = CrossPixelStats::independent(4, (&left.0, &left.1), (&right.0, &right.1));
        let c = gap_feature_cov(&cross, &cfg).unwrap();
        assert!(c.abs() < 1e-10, "got {c}");
    }

    #[test]
    fn deact_cov_identity_and_zero() {
        assert_relative_eq!(deact_cov(0.37, 1.0, 0.5).unwrap(), 0.37, epsilon = 1e-15);
        assert_eq!(deact_cov(0.0, 0.8, 0.01).unwrap(), 0.0);
        assert!(deact_cov(0.1, 0.8, 0.0).is_err());
    }

    #[test]
    fn output_gaussian_single_feature_passthrough() {
        let feats = [Moments::new(1.5, 0.25)];
        let w = FCWeights::new(vec![1.0]).unwrap();
        let g = output_gaussian(&feats, &CovMatrix::zeros(1), &w).unwrap();
        assert_relative_eq!(g.mu, 1.5, epsilon = 1e-15);
        assert_relative_eq!(g.sigma, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn output_gaussian_rejects_zero_weights() {
        let feats = [Moments::new(1.0, 1.0), Moments::new(2.0, 1.0)];
        let w = FCWeights::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            output_gaussian(&feats, &CovMatrix::zeros(2), &w),
            Err(Error::NonPositiveOutputVariance { .. })
        ));
    }

    #[test]
    fn kl_basic_values() {
        let p = GaussianParams::new(0.0, 1.0).unwrap();
        assert_eq!(kl_gaussian(&GaussianPair { pos: p, neg: p }), 0.0);
        let pair = GaussianPair {
            pos: GaussianParams::new(1.0, 1.0).unwrap(),
            neg: GaussianParams::new(0.0, 1.0).unwrap(),
        };
        assert_relative_eq!(kl_gaussian(&pair), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kl_invariant_under_joint_scaling() {
        let pair = GaussianPair {
            pos: GaussianParams::new(1.2, 0.8).unwrap(),
            neg: GaussianParams::new(-0.4, 1.9).unwrap(),
        };
        let c = 3.7;
        let scaled = GaussianPair {
            pos: GaussianParams::new(c * 1.2, c * 0.8).unwrap(),
            neg: GaussianParams::new(c * -0.4, c * 1.9).unwrap(),
        };
        assert_relative_eq!(kl_gaussian(&pair), kl_gaussian(&scaled), max_relative = 1e-12);
    }

    #[test]
    fn degenerate_filters_fail_at_output() {
        let filters = vec![ZeroGammaParams::new(1.0, 2.0, 1.0).unwrap(); 2];
        let cfg = ActivationConfig::new(1.0, 0.1, 1.0, 0.0, 4).unwrap();
        let w = FCWeights::new(vec![1.0, 1.0]).unwrap();
        let err = predict_block_independent(&filters, &cfg, &w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer"), "unexpected error: {msg}");
    }
}
