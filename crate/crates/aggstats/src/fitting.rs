//! Estimation of the model parameters from observed activations: zero-Gamma
//! fits per filter (maximum likelihood on the positive part), pixel
//! cross-moment tables, Gaussian fits of output samples and the observed KL.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{GaussianParams, ZeroGammaParams};
use crate::error::{Error, Result};
use crate::propagation::{kl_gaussian, BlockStats, CrossPixelStats, GaussianPair, PixelStats};
use crate::specfun::{digamma_fn, lgamma_fn, reg_lower_incomplete_gamma, trigamma_fn};
use crate::util::{pairwise_mean, pairwise_sum};

/// Values at or below this are treated as ReLU zeros when fitting.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-12;

const MIN_POSITIVE_SAMPLES: usize = 10;

/// Class tag of an activation dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Positive => write!(f, "positive"),
            Label::Negative => write!(f, "negative"),
        }
    }
}

/// Per-image, per-filter, per-pixel activations of one class, all >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationDump {
    pub n_images: usize,
    pub n_filters: usize,
    pub n_pixels: usize,
    /// Row-major image x filter x pixel.
    pub values: Vec<f64>,
    pub label: Label,
}

impl ActivationDump {
    pub fn new(
        n_images: usize,
        n_filters: usize,
        n_pixels: usize,
        values: Vec<f64>,
        label: Label,
    ) -> Result<Self> {
        let expected = n_images * n_filters * n_pixels;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "ActivationDump values",
                expected,
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::domain(
                "ActivationDump",
                format!("post-ReLU activations must be non-negative and finite, got {v}"),
            ));
        }
        Ok(ActivationDump {
            n_images,
            n_filters,
            n_pixels,
            values,
            label,
        })
    }

    #[inline]
    pub fn value(&self, image: usize, filter: usize, pixel: usize) -> f64 {
        self.values[(image * self.n_filters + filter) * self.n_pixels + pixel]
    }

    /// All samples of one filter across images and pixels, image-major order.
    pub fn filter_samples(&self, filter: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_images * self.n_pixels);
        for img in 0..self.n_images {
            let base = (img * self.n_filters + filter) * self.n_pixels;
            out.extend_from_slice(&self.values[base..base + self.n_pixels]);
        }
        out
    }
}

/// Result of a zero-Gamma fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ZeroGammaParams,
    pub n_zero: usize,
    pub n_pos: usize,
    pub log_likelihood: f64,
    /// Kolmogorov-Smirnov statistic of the positive part against the fitted
    /// Gamma.
    pub ks_stat: f64,
}

/// Fit the zero-Gamma mixture: p from the zero fraction, (a, s) by Gamma
/// maximum likelihood on the strictly positive remainder (Newton on the
/// digamma equation, method-of-moments start).
pub fn fit_zero_gamma(samples: &[f64], zero_threshold: f64) -> Result<FitReport> {
    let n = samples.len();
    let mut positives: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|v| *v > zero_threshold)
        .collect();
    let n_pos = positives.len();
    let n_zero = n - n_pos;
    if n_pos < MIN_POSITIVE_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_POSITIVE_SAMPLES,
            got: n_pos,
        });
    }

    let p = n_zero as f64 / n as f64;
    let mean = pairwise_mean(&positives);
    let mean_log = pairwise_mean(&positives.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let sq_dev: Vec<f64> = positives.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq_dev) / (n_pos as f64 - 1.0);

    // ln a - psi(a) = ln(mean) - mean(ln x)
    let c = mean.ln() - mean_log;
    if !(c > 0.0) {
        return Err(Error::domain(
            "fit_zero_gamma",
            "positive samples are numerically constant; Gamma MLE is degenerate",
        ));
    }
    let mut a = if var > 0.0 { (mean * mean / var).clamp(1e-3, 1e6) } else { 1.0 };
    let mut converged = false;
    for _ in 0..100 {
        let f = a.ln() - digamma_fn(a)? - c;
        let df = 1.0 / a - trigamma_fn(a)?;
        let mut next = a - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = a / 2.0;
        }
        next = next.clamp(1e-8, 1e8);
        if (next - a).abs() <= 1e-12 * a {
            a = next;
            converged = true;
            break;
        }
        a = next;
    }
    if !converged {
        return Err(Error::NonConvergence {
            op: "fit_zero_gamma",
            iters: 100,
        });
    }
    let s = mean / a;
    let params = ZeroGammaParams::new(p, a, s)?;

    let lgam = lgamma_fn(a)?;
    let ln_terms: Vec<f64> = positives
        .iter()
        .map(|v| (a - 1.0) * v.ln() - v / s - lgam - a * s.ln())
        .collect();
    let mut log_likelihood = pairwise_sum(&ln_terms);
    if n_zero > 0 {
        log_likelihood += n_zero as f64 * p.ln();
    }
    if p < 1.0 {
        log_likelihood += n_pos as f64 * (1.0 - p).ln();
    }

    positives.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let mut ks_stat: f64 = 0.0;
    for (i, v) in positives.iter().enumerate() {
        let cdf = reg_lower_incomplete_gamma(a, v / s)?;
        let hi = (i + 1) as f64 / n_pos as f64;
        let lo = i as f64 / n_pos as f64;
        ks_stat = ks_stat.max((cdf - lo).abs()).max((hi - cdf).abs());
    }

    Ok(FitReport {
        params,
        n_zero,
        n_pos,
        log_likelihood,
        ks_stat,
    })
}

/// Sample pixel moment tables of one filter: unbiased first moments, plug-in
/// higher cross-moments, accumulated in image order.
pub fn estimate_pixel_stats(dump: &ActivationDump, filter: usize) -> Result<PixelStats> {
    if dump.n_images < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: dump.n_images,
        });
    }
    if filter >= dump.n_filters {
        return Err(Error::MissingMoment(format!(
            "filter {filter} outside dump with {} filters",
            dump.n_filters
        )));
    }
    let r = dump.n_pixels;
    let n = dump.n_images as f64;
    let mut m1 = vec![0.0; r];
    let mut m2 = vec![0.0; r];
    let mut m11 = vec![0.0; r * r];
    let mut m21 = vec![0.0; r * r];
    let mut m22 = vec![0.0; r * r];
    for img in 0..dump.n_images {
        let base = (img * dump.n_filters + filter) * r;
        let px = &dump.values[base..base + r];
        for i in 0..r {
            m1[i] += px[i];
            m2[i] += px[i] * px[i];
            for j in 0..r {
                let (vi, vj) = (px[i], px[j]);
                m11[i * r + j] += vi * vj;
                m21[i * r + j] += vi * vi * vj;
                m22[i * r + j] += vi * vi * vj * vj;
            }
        }
    }
    for v in m1.iter_mut().chain(&mut m2).chain(&mut m11).chain(&mut m21).chain(&mut m22) {
        *v /= n;
    }
    PixelStats::new(r, m1, m2, m11, m21, m22)
}

/// Cross-filter pixel moment tables E[U_k^a W_l^b] for a filter pair.
pub fn estimate_cross_stats(
    dump: &ActivationDump,
    left: usize,
    right: usize,
) -> Result<CrossPixelStats> {
    if dump.n_images < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: dump.n_images,
        });
    }
    if left >= dump.n_filters || right >= dump.n_filters {
        return Err(Error::MissingMoment(format!(
            "filter pair ({left}, {right}) outside dump with {} filters",
            dump.n_filters
        )));
    }
    let r = dump.n_pixels;
    let n = dump.n_images as f64;
    let mut left_m1 = vec![0.0; r];
    let mut left_m2 = vec![0.0; r];
    let mut right_m1 = vec![0.0; r];
    let mut right_m2 = vec![0.0; r];
    let mut e11 = vec![0.0; r * r];
    let mut e21 = vec![0.0; r * r];
    let mut e12 = vec![0.0; r * r];
    let mut e22 = vec![0.0; r * r];
    for img in 0..dump.n_images {
        let lbase = (img * dump.n_filters + left) * r;
        let rbase = (img * dump.n_filters + right) * r;
        let lv = &dump.values[lbase..lbase + r];
        let rv = &dump.values[rbase..rbase + r];
        for k in 0..r {
            left_m1[k] += lv[k];
            left_m2[k] += lv[k] * lv[k];
            right_m1[k] += rv[k];
            right_m2[k] += rv[k] * rv[k];
            for l in 0..r {
                let (u, w) = (lv[k], rv[l]);
                e11[k * r + l] += u * w;
                e21[k * r + l] += u * u * w;
                e12[k * r + l] += u * w * w;
                e22[k * r + l] += u * u * w * w;
            }
        }
    }
    for v in left_m1
        .iter_mut()
        .chain(&mut left_m2)
        .chain(&mut right_m1)
        .chain(&mut right_m2)
        .chain(&mut e11)
        .chain(&mut e21)
        .chain(&mut e12)
        .chain(&mut e22)
    {
        *v /= n;
    }
    CrossPixelStats::new(r, left_m1, left_m2, right_m1, right_m2, e11, e21, e12, e22)
}

/// Per-filter and cross-filter tables for a whole dump; filters fit in
/// parallel, collected in filter order.
pub fn estimate_block_stats(dump: &ActivationDump) -> Result<BlockStats> {
    let f = dump.n_filters;
    let per_filter: Result<Vec<PixelStats>> =
        (0..f).into_par_iter().map(|i| estimate_pixel_stats(dump, i)).collect();
    let pairs: Vec<(usize, usize)> = (0..f)
        .flat_map(|i| ((i + 1)..f).map(move |j| (i, j)))
        .collect();
    let cross: Result<Vec<CrossPixelStats>> = pairs
        .into_par_iter()
        .map(|(i, j)| estimate_cross_stats(dump, i, j))
        .collect();
    BlockStats::new(per_filter?, cross?)
}

/// Fit all filters of a dump; the error names the offending filter.
pub fn fit_all_filters(
    dump: &ActivationDump,
    zero_threshold: f64,
) -> std::result::Result<Vec<FitReport>, (usize, Error)> {
    (0..dump.n_filters)
        .map(|f| {
            fit_zero_gamma(&dump.filter_samples(f), zero_threshold).map_err(|e| (f, e))
        })
        .collect()
}

/// Sample mean and unbiased standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<GaussianParams> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let mean = pairwise_mean(samples);
    let sq: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (samples.len() as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate { op: "fit_gaussian" });
    }
    GaussianParams::new(mean, var.sqrt())
}

/// KL divergence between Gaussians fitted to the two sample sets.
pub fn observed_kl(pos_samples: &[f64], neg_samples: &[f64]) -> Result<f64> {
    let pair = GaussianPair {
        pos: fit_gaussian(pos_samples)?,
        neg: fit_gaussian(neg_samples)?,
    };
    Ok(kl_gaussian(&pair))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_zero_input_is_insufficient() {
        let samples = vec![0.0; 100];
        assert!(matches!(
            fit_zero_gamma(&samples, DEFAULT_ZERO_THRESHOLD),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn constant_dump_gives_constant_stats() {
        let dump = ActivationDump::new(3, 1, 2, vec![4.0; 6], Label::Positive).unwrap();
        let stats = estimate_pixel_stats(&dump, 0).unwrap();
        assert_relative_eq!(stats.e1(0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(stats.e11(0, 1), 16.0, epsilon = 1e-12);
        // zero covariance
        assert_relative_eq!(stats.e11(0, 1) - stats.e1(0) * stats.e1(1), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn dump_rejects_negative_values() {
        assert!(ActivationDump::new(1, 1, 2, vec![1.0, -0.5], Label::Negative).is_err());
    }

    #[test]
    fn gaussian_fit_two_points() {
        let g = fit_gaussian(&[0.0, 2.0]).unwrap();
        assert_relative_eq!(g.mu, 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.sigma, std::f64::consts::SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_fit_rejects_constants() {
        assert!(matches!(
            fit_gaussian(&[3.0, 3.0, 3.0]),
            Err(Error::Degenerate { .. })
        ));
        assert!(fit_gaussian(&[1.0]).is_err());
    }

    #[test]
    fn observed_kl_of_identical_sets_is_zero() {
        let s = vec![0.3, 1.7, 2.2, -0.4, 0.9];
        assert_eq!(observed_kl(&s, &s).unwrap(), 0.0);
    }
}
