//! Monte Carlo oracle: synthetic correlated conv-layer activations with exact
//! zero-Gamma marginals (Gaussian copula with equicorrelated blocks), the
//! empirical forward pass through the aggregation block, and per-layer
//! observed statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::ZeroGammaParams;
use crate::error::{Error, Result};
use crate::fitting::{ActivationDump, Label};
use crate::moments::Moments;
use crate::propagation::{ActivationConfig, CovMatrix, FCWeights};
use crate::specfun::normal_cdf;
use crate::util::{pairwise_mean, pairwise_sum};

/// Description of a synthetic conv-layer output: per-filter zero-Gamma
/// marginals with latent equicorrelation `rho_pix` between pixels of the same
/// filter and `rho_filt` across filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub filters: Vec<ZeroGammaParams>,
    pub rho_pix: f64,
    pub rho_filt: f64,
    pub r_pixels: usize,
    pub n_images: usize,
    pub seed: u64,
    pub label: Label,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::domain("SyntheticSpec", "need at least one filter"));
        }
        if self.r_pixels == 0 || self.n_images == 0 {
            return Err(Error::domain(
                "SyntheticSpec",
                "pixel and image counts must be >= 1",
            ));
        }
        for rho in [self.rho_pix, self.rho_filt] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::domain(
                    "SyntheticSpec",
                    format!("correlation parameters must lie in [0, 1), got {rho}"),
                ));
            }
        }
        Ok(())
    }
}

/// Row-major lower-triangular Cholesky factor.
fn cholesky(dim: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// Draw a synthetic activation dump. The latent normals are mapped through
/// the standard normal CDF and the zero-Gamma quantile, so each filter's
/// marginal is exactly its zero-Gamma law; the zero mass comes from latent
/// values below the p-quantile.
///
/// Image i uses stream i of a counter-based RNG derived from the seed, so the
/// output is identical regardless of how images are scheduled over threads.
pub fn generate(spec: &SyntheticSpec) -> Result<ActivationDump> {
    spec.validate()?;
    let f = spec.filters.len();
    let r = spec.r_pixels;
    let dim = f * r;

    let mut corr = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            corr[a * dim + b] = if a == b {
                1.0
            } else if a / r == b / r {
                spec.rho_pix
            } else {
                spec.rho_filt
            };
        }
    }
    let chol = cholesky(dim, &corr)?;

    let mut values = vec![0.0; spec.n_images * dim];
    let results: Result<Vec<()>> = values
        .par_chunks_mut(dim)
        .enumerate()
        .map(|(img, out)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(img as u64);
            let mut latent = vec![0.0f64; dim];
            for v in latent.iter_mut() {
                *v = rng.sample(rand_distr::StandardNormal);
            }
            for a in 0..dim {
                let mut z = 0.0;
                for k in 0..=a {
                    z += chol[a * dim + k] * latent[k];
                }
                let u = normal_cdf(z).min(1.0 - 1e-16);
                out[a] = spec.filters[a / r].quantile(u)?;
            }
            Ok(())
        })
        .collect();
    results?;

    ActivationDump::new(spec.n_images, f, r, values, spec.label)
}

/// Per-layer sample arrays of the empirical forward pass, image-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub n_images: usize,
    pub n_filters: usize,
    pub n_pixels: usize,
    /// Activated pixel values, image x filter x pixel.
    pub activated: Vec<f64>,
    /// Pooled features, image x filter.
    pub gap: Vec<f64>,
    /// Deactivated features, image x filter.
    pub deactivated: Vec<f64>,
    /// FC output node, per image.
    pub output: Vec<f64>,
}

/// Empirical forward pass: activation, pooling, deactivation, FC combination.
pub fn forward(
    dump: &ActivationDump,
    cfg: &ActivationConfig,
    weights: &FCWeights,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    if weights.len() != dump.n_filters {
        return Err(Error::DimensionMismatch {
            what: "forward weights",
            expected: dump.n_filters,
            got: weights.len(),
        });
    }
    if cfg.r_pixels != dump.n_pixels {
        return Err(Error::DimensionMismatch {
            what: "forward pixel count",
            expected: dump.n_pixels,
            got: cfg.r_pixels,
        });
    }
    let f = dump.n_filters;
    let r = dump.n_pixels;
    let n = dump.n_images;

    let mut activated = vec![0.0; n * f * r];
    let mut gap = vec![0.0; n * f];
    let mut deactivated = vec![0.0; n * f];
    let mut output = vec![0.0; n];

    let results: Result<Vec<()>> = activated
        .par_chunks_mut(f * r)
        .zip(gap.par_chunks_mut(f))
        .zip(deactivated.par_chunks_mut(f))
        .zip(output.par_iter_mut())
        .enumerate()
        .map(|(img, (((act, gap_row), de_row), out))| {
            let base = img * f * r;
            let mut out_terms = vec![0.0; f];
            for fi in 0..f {
                let mut pix = vec![0.0; r];
                for px in 0..r {
                    let v = cfg.activate(dump.values[base + fi * r + px]);
                    if !v.is_finite() {
                        return Err(Error::Overflow {
                            op: "forward activation",
                            value: dump.values[base + fi * r + px],
                        });
                    }
                    act[fi * r + px] = v;
                    pix[px] = v;
                }
                let pooled = pairwise_mean(&pix);
                gap_row[fi] = pooled;
                let de = cfg.deactivate(pooled);
                if !de.is_finite() {
                    return Err(Error::Overflow {
                        op: "forward deactivation",
                        value: pooled,
                    });
                }
                de_row[fi] = de;
                out_terms[fi] = weights[fi] * de;
            }
            *out = pairwise_sum(&out_terms);
            Ok(())
        })
        .collect();
    results?;

    Ok(ForwardTrace {
        n_images: n,
        n_filters: f,
        n_pixels: r,
        activated,
        gap,
        deactivated,
        output,
    })
}

/// Fixed-bin histogram with Freedman-Diaconis bin width on the pooled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    const MAX_BINS: usize = 1000;

    pub fn freedman_diaconis(values: &[f64]) -> Histogram {
        assert!(!values.is_empty(), "histogram of an empty sample");
        let mut sorted = values.to_vec();
        sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
        let n = sorted.len();
        let lo = sorted[0];
        let hi = sorted[n - 1];
        let range = hi - lo;
        if range == 0.0 {
            return Histogram {
                lo,
                width: 1.0,
                counts: vec![n as u64],
            };
        }
        let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
        let mut width = 2.0 * iqr / (n as f64).cbrt();
        if width <= 0.0 {
            width = range / 64.0;
        }
        let bins = ((range / width).ceil() as usize).clamp(1, Self::MAX_BINS);
        let width = range / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { lo, width, counts }
    }
}

/// Sample statistics of every layer of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceObservation {
    pub conv: Vec<Moments>,
    pub activated: Vec<Moments>,
    pub gap: Vec<Moments>,
    pub deactivated: Vec<Moments>,
    pub output: Moments,
    pub gap_cov: CovMatrix,
    pub deact_cov: CovMatrix,
    pub histograms: LayerHistograms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHistograms {
    pub gap: Histogram,
    pub deactivated: Histogram,
    pub output: Histogram,
}

fn sample_moments(values: &[f64]) -> Moments {
    let mean = pairwise_mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    Moments::new(mean, pairwise_sum(&sq) / (values.len() as f64 - 1.0))
}

fn feature_cov(rows: &[f64], n: usize, f: usize) -> CovMatrix {
    let means: Vec<f64> = (0..f)
        .map(|fi| {
            let col: Vec<f64> = (0..n).map(|img| rows[img * f + fi]).collect();
            pairwise_mean(&col)
        })
        .collect();
    let mut cov = CovMatrix::zeros(f);
    for i in 0..f {
        for j in i..f {
            let prods: Vec<f64> = (0..n)
                .map(|img| (rows[img * f + i] - means[i]) * (rows[img * f + j] - means[j]))
                .collect();
            cov.set_sym(i, j, pairwise_sum(&prods) / (n as f64 - 1.0));
        }
    }
    cov
}

/// Per-layer sample moments, feature covariance matrices and histograms.
pub fn observe(dump: &ActivationDump, trace: &ForwardTrace) -> Result<TraceObservation> {
    if trace.n_images < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: trace.n_images,
        });
    }
    if dump.n_images != trace.n_images
        || dump.n_filters != trace.n_filters
        || dump.n_pixels != trace.n_pixels
    {
        return Err(Error::DimensionMismatch {
            what: "observe dump/trace",
            expected: dump.n_images,
            got: trace.n_images,
        });
    }
    let (n, f, r) = (trace.n_images, trace.n_filters, trace.n_pixels);

    let per_filter_pooled = |data: &[f64]| -> Vec<Moments> {
        (0..f)
            .map(|fi| {
                let mut vals = Vec::with_capacity(n * r);
                for img in 0..n {
                    let base = (img * f + fi) * r;
                    vals.extend_from_slice(&data[base..base + r]);
                }
                sample_moments(&vals)
            })
            .collect()
    };
    let conv = per_filter_pooled(&dump.values);
    let activated = per_filter_pooled(&trace.activated);

    let per_feature = |rows: &[f64]| -> Vec<Moments> {
        (0..f)
            .map(|fi| {
                let col: Vec<f64> = (0..n).map(|img| rows[img * f + fi]).collect();
                sample_moments(&col)
            })
            .collect()
    };
    let gap = per_feature(&trace.gap);
    let deactivated = per_feature(&trace.deactivated);
    let output = sample_moments(&trace.output);

    let gap_cov = feature_cov(&trace.gap, n, f);
    let deact_cov = feature_cov(&trace.deactivated, n, f);

    let histograms = LayerHistograms {
        gap: Histogram::freedman_diaconis(&trace.gap),
        deactivated: Histogram::freedman_diaconis(&trace.deactivated),
        output: Histogram::freedman_diaconis(&trace.output),
    };

    Ok(TraceObservation {
        conv,
        activated,
        gap,
        deactivated,
        output,
        gap_cov,
        deact_cov,
        histograms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_spec(rho_pix: f64, rho_filt: f64) -> SyntheticSpec {
        SyntheticSpec {
            filters: vec![
                ZeroGammaParams::new(0.2, 2.0, 0.5).unwrap(),
                ZeroGammaParams::new(0.4, 1.5, 1.0).unwrap(),
            ],
            rho_pix,
            rho_filt,
            r_pixels: 4,
            n_images: 200,
            seed: 7,
            label: Label::Positive,
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = tiny_spec(0.3, 0.1);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn zero_fraction_tracks_p() {
        let mut spec = tiny_spec(0.0, 0.0);
        spec.n_images = 5000;
        let dump = generate(&spec).unwrap();
        let samples = dump.filter_samples(0);
        let frac = samples.iter().filter(|v| **v == 0.0).count() as f64 / samples.len() as f64;
        assert!((frac - 0.2).abs() < 0.02, "zero fraction {frac}");
    }

    #[test]
    fn all_zero_dump_produces_zero_trace() {
        let dump = ActivationDump::new(3, 2, 4, vec![0.0; 24], Label::Negative).unwrap();
        let mut cfg = ActivationConfig::new(1.0, 0.1, 1.0, 0.0, 4).unwrap();
        cfg.identity_activation = true;
        let w = FCWeights::new(vec![0.5, -0.5]).unwrap();
        let trace = forward(&dump, &cfg, &w).unwrap();
        assert!(trace.output.iter().all(|v| *v == 0.0));
        assert!(trace.gap.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_mode_reproduces_plain_gap() {
        let dump = ActivationDump::new(
            2,
            1,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            Label::Positive,
        )
        .unwrap();
        let mut cfg = ActivationConfig::new(1.0, 0.1, 1.0, 0.0, 3).unwrap();
        cfg.identity_activation = true;
        let w = FCWeights::new(vec![1.0]).unwrap();
        let trace = forward(&dump, &cfg, &w).unwrap();
        assert_relative_eq!(trace.gap[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(trace.gap[1], 5.0, epsilon = 1e-15);
        assert_eq!(trace.output, vec![2.0, 5.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let dump = ActivationDump::new(1, 1, 1, vec![1e5], Label::Positive).unwrap();
        let cfg = ActivationConfig::new(1.0, 1.0, 1.0, 0.0, 1).unwrap();
        let w = FCWeights::new(vec![1.0]).unwrap();
        assert!(matches!(
            forward(&dump, &cfg, &w),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn histogram_covers_all_samples() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.731).sin().abs()).collect();
        let h = Histogram::freedman_diaconis(&values);
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        let constant = vec![2.5; 10];
        let h = Histogram::freedman_diaconis(&constant);
        assert_eq!(h.counts, vec![10]);
    }

    #[test]
    fn constant_trace_has_zero_variances() {
        let dump = ActivationDump::new(4, 1, 2, vec![1.0; 8], Label::Positive).unwrap();
        let mut cfg = ActivationConfig::new(1.0, 0.1, 1.0, 0.0, 2).unwrap();
        cfg.identity_activation = true;
        let w = FCWeights::new(vec![1.0]).unwrap();
        let trace = forward(&dump, &cfg, &w).unwrap();
        let obs = observe(&dump, &trace).unwrap();
        assert_eq!(obs.output.variance, 0.0);
        assert_eq!(obs.gap[0].variance, 0.0);
    }
}
