//! Shared oracle helpers for the integration tests: adaptive quadrature,
//! Kolmogorov-Smirnov statistics, streaming sample moments with standard
//! errors, and central finite differences. These are independent of the
//! analytic formulas they check.

#![allow(dead_code)]

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// Integrate a density on [0, hi] whose integrand may have an integrable
/// singularity at the origin, via the substitution x = u^4.
pub fn integrate_density<F: Fn(f64) -> f64>(f: &F, hi: f64, tol: f64) -> f64 {
    let g = |u: f64| {
        if u == 0.0 {
            0.0
        } else {
            let x = u * u * u * u;
            f(x) * 4.0 * u * u * u
        }
    };
    integrate(&g, 0.0, hi.powf(0.25), tol)
}

/// Kolmogorov-Smirnov statistic of samples against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in samples.iter().enumerate() {
        let c = cdf(*v);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Streaming central moments up to order four (Pebay update), carrying the
/// standard errors of the sample mean and sample variance.
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    n: u64,
    m1: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.m1;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        self.m1 += delta_n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.m1
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.n as f64 - 1.0)
    }

    fn fourth_central(&self) -> f64 {
        self.m4 / self.n as f64
    }

    /// Standard error of the sample mean.
    pub fn se_mean(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// Standard error of the sample variance:
    /// sqrt((m4 - sigma^4 (n-3)/(n-1)) / n).
    pub fn se_variance(&self) -> f64 {
        let n = self.n as f64;
        let var = self.variance();
        let m4 = self.fourth_central();
        ((m4 - var * var * (n - 3.0) / (n - 1.0)).max(0.0) / n).sqrt()
    }
}

/// Central finite difference with step-halving confirmation: returns the
/// h/2 estimate, panicking if the two estimates disagree wildly (signalling
/// an unusable step for this function).
pub fn central_diff<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
    let d2 = (f(x + 0.5 * h) - f(x - 0.5 * h)) / h;
    let scale = d1.abs().max(d2.abs()).max(1e-12);
    assert!(
        (d1 - d2).abs() / scale < 1e-2,
        "finite difference unstable at x = {x}: {d1} vs {d2}"
    );
    d2
}

/// Deterministic stream of quasi-random f64 in [0, 1) for test parameter
/// draws (splitmix64).
pub struct ParamRng(u64);

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        ParamRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }
}
