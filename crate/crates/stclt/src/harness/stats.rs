//! Normality diagnostics: one-sample Kolmogorov-Smirnov against the standard
//! normal, Mardia's multivariate skewness/kurtosis, and log-log decay fits
//! for covariance tail exponents.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::numerics::{spd_inv_sqrt, NumericsError, SymMatrix};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("sample contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empirical covariance is singular: {0}")]
    SingularCovariance(NumericsError),
    #[error("decay fit needs at least {need} positive magnitudes, got {got}")]
    InsufficientDecayData { got: usize, need: usize },
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Standard normal quantile, used for QQ data.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    /// `sup_x |F_n(x) - Phi(x)|` over the 2n jump candidates.
    pub d: f64,
    /// Asymptotic Kolmogorov p-value at `sqrt(n) d`.
    pub p_approx: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 x^2)`, truncated at 100 terms
/// or a 1e-12 tail. Below `x = 0.5` the alternating series loses accuracy,
/// so the equivalent theta-series form of the CDF is used there.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.5 {
        // K(x) = sqrt(2 pi) / x * sum exp(-(2j-1)^2 pi^2 / (8 x^2))
        let mut cdf = 0.0;
        for j in 1..=100u32 {
            let e = (2 * j - 1) as f64;
            let term = (-e * e * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
            cdf += term;
            if term < 1e-12 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100u32 {
        let term = (-2.0 * (j * j) as f64 * x * x).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic against the standard normal with its asymptotic
/// p-value. Requires at least 3 finite samples.
pub fn ks_statistic(samples: &[f64]) -> Result<KsResult, StatsError> {
    let n = samples.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { got: n, need: 3 });
    }
    if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(idx));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dist = std_normal();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let phi = dist.cdf(x);
        let upper = (i + 1) as f64 / nf - phi;
        let lower = phi - i as f64 / nf;
        d = d.max(upper).max(lower);
    }
    Ok(KsResult {
        d,
        p_approx: kolmogorov_sf(nf.sqrt() * d),
        n,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MardiaResult {
    /// Multivariate skewness `b_{1,q}`.
    pub skewness: f64,
    /// Multivariate kurtosis `b_{2,q}`.
    pub kurtosis: f64,
    /// `q (q + 2)`, the kurtosis expectation under normality.
    pub expected_kurtosis: f64,
}

/// Mardia's statistics on an `R x q` sample matrix. The sample is whitened
/// with the inverse square root of the (1/R-normalized) covariance, after
/// which `b_1 = sum of squared third moments` and `b_2 = mean ||y||^4`;
/// both identities are exact rearrangements of the classical double sums.
pub fn mardia(samples: &DMatrix<f64>) -> Result<MardiaResult, StatsError> {
    let r = samples.nrows();
    let q = samples.ncols();
    if r <= q + 1 {
        return Err(StatsError::TooFewSamples { got: r, need: q + 2 });
    }
    let rf = r as f64;
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for i in 0..r {
        for j in 0..q {
            centered[(i, j)] -= mean[j];
        }
    }
    let cov = SymMatrix::with_tolerance(centered.transpose() * &centered / rf, 1e-8)
        .map_err(StatsError::SingularCovariance)?;
    let whitener = spd_inv_sqrt(&cov).map_err(StatsError::SingularCovariance)?;
    let y = centered * whitener.as_matrix();

    // third-moment tensor m_abc = mean(y_a y_b y_c)
    let mut skewness = 0.0;
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                let mut m = 0.0;
                for i in 0..r {
                    m += y[(i, a)] * y[(i, b)] * y[(i, c)];
                }
                m /= rf;
                skewness += m * m;
            }
        }
    }
    let mut kurtosis = 0.0;
    for i in 0..r {
        let mut s = 0.0;
        for a in 0..q {
            s += y[(i, a)] * y[(i, a)];
        }
        kurtosis += s * s;
    }
    kurtosis /= rf;
    Ok(MardiaResult {
        skewness,
        kurtosis,
        expected_kurtosis: (q * (q + 2)) as f64,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `log magnitude` against `log lag`.
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% confidence interval for the slope.
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n_used: usize,
}

impl DecayFit {
    /// True when the fitted exponent is below `threshold` with the whole
    /// confidence interval excluding it.
    pub fn passes(&self, threshold: f64) -> bool {
        self.slope < threshold && self.ci_upper < threshold
    }
}

/// Log-log least squares on `(lag, magnitude)` pairs; nonpositive
/// magnitudes are dropped, at least 5 must survive.
pub fn decay_fit(series: &[(f64, f64)]) -> Result<DecayFit, StatsError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(lag, mag)| *lag > 0.0 && *mag > 0.0)
        .map(|&(lag, mag)| (lag.ln(), mag.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(StatsError::InsufficientDecayData {
            got: pts.len(),
            need: 5,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum::<f64>();
    let df = pts.len() - 2;
    let sigma2 = rss / df as f64;
    let slope_se = (sigma2 / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, df as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    Ok(DecayFit {
        slope,
        intercept,
        slope_se,
        ci_lower: slope - tq * slope_se,
        ci_upper: slope + tq * slope_se,
        n_used: pts.len(),
    })
}
