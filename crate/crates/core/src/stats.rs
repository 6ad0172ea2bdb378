//! Statistics for the Monte Carlo experiments: summary moments, bootstrap
//! percentile intervals, least-squares fits on log-log scales, and
//! distribution test statistics.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Moment summary of a sample. Skewness and excess kurtosis use the
/// population form (standardised central moments) and are reported as 0
/// for degenerate samples, which callers flag separately.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance (n - 1 denominator).
    pub variance: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn summarize(xs: &[f64]) -> Result<SummaryStats> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "summary needs at least 2 samples, got {n}"
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("sample contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let variance = m2 / (nf - 1.0);
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(SummaryStats {
        n,
        mean,
        variance,
        std_dev: variance.sqrt(),
        skewness,
        excess_kurtosis,
    })
}

/// Percentile bootstrap confidence interval for a statistic of the sample.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Percentile bootstrap for an arbitrary estimator. Deterministic for a
/// given seed. The interval is widened to contain the point estimate when
/// the raw percentiles exclude it (possible for skewed estimators on
/// small samples), so the reported interval always brackets the point.
pub fn bootstrap_ci(
    xs: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
    estimator: impl Fn(&[f64]) -> f64,
) -> Result<BootstrapCi> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 2 samples, got {n}"
        )));
    }
    if !(0.5 < level && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must be in (0.5, 1), got {level}"
        )));
    }
    if resamples < 100 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    let point = estimator(xs);
    if !point.is_finite() {
        return Err(Error::Numerical(format!(
            "estimator returned {point} on the full sample"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = vec![0.0; n];
    let mut estimates = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for slot in scratch.iter_mut() {
            *slot = xs[rng.random_range(0..n)];
        }
        let e = estimator(&scratch);
        if e.is_finite() {
            estimates.push(e);
        }
    }
    if estimates.len() < resamples / 2 {
        return Err(Error::Numerical(
            "estimator degenerate on more than half of the bootstrap resamples".into(),
        ));
    }
    estimates.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let alpha = 1.0 - level;
    let lower = percentile(&estimates, alpha / 2.0);
    let upper = percentile(&estimates, 1.0 - alpha / 2.0);
    Ok(BootstrapCi {
        point,
        lower: lower.min(point),
        upper: upper.max(point),
        level,
        resamples,
    })
}

/// Linear-interpolation percentile of a sorted sample.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi.min(n - 1)] * frac
}

/// Ordinary least squares fit y = intercept + slope x.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope under homoskedastic residuals.
    pub slope_se: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> Result<Regression> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::InvalidParameter(format!(
            "regression needs matched samples with at least 3 points, got {n} and {}",
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("regression input contains non-finite values".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter(
            "regression abscissae are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let slope_se = (ss_res / (nf - 2.0) / sxx).max(0.0).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(Regression {
        slope,
        intercept,
        slope_se,
        r_squared,
        n,
    })
}

/// Least squares on ln x versus ln y; the slope is the fitted power-law
/// exponent. All inputs must be strictly positive.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<Regression> {
    if xs.iter().chain(ys).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::InvalidParameter(
            "log-log fit needs strictly positive values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly)
}

/// Kolmogorov-Smirnov statistic of a sample against the Gaussian with the
/// given mean and standard deviation: sup_x |F_n(x) - Phi(x)|.
pub fn ks_statistic_normal(xs: &[f64], mean: f64, std_dev: f64) -> Result<f64> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "test statistic needs at least 2 samples, got {n}"
        )));
    }
    if !std_dev.is_finite() || std_dev <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "reference standard deviation must be positive, got {std_dev}"
        )));
    }
    let normal = Normal::new(mean, std_dev)
        .map_err(|e| Error::InvalidParameter(format!("reference Gaussian: {e}")))?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidParameter("sample contains non-finite values".into()));
        }
        let f = normal.cdf(*x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    Ok(d)
}

/// Chi-square goodness-of-fit outcome.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ChiSquareGof {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of observed cell counts against expected cell
/// probabilities (no fitted parameters, so dof = cells - 1).
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<ChiSquareGof> {
    let k = observed.len();
    if k < 2 || expected_probs.len() != k {
        return Err(Error::InvalidParameter(format!(
            "chi-square needs matching cell arrays of length >= 2, got {k} and {}",
            expected_probs.len()
        )));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    let prob_mass: f64 = expected_probs.iter().sum();
    if (prob_mass - 1.0).abs() > 1e-8 || expected_probs.iter().any(|p| p.is_nan() || *p <= 0.0) {
        return Err(Error::InvalidParameter(
            "expected probabilities must be positive and sum to 1".into(),
        ));
    }
    let mut statistic = 0.0;
    for (o, p) in observed.iter().zip(expected_probs) {
        let e = p * total as f64;
        let d = *o as f64 - e;
        statistic += d * d / e;
    }
    let dof = k - 1;
    let dist = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Numerical(format!("chi-square distribution: {e}")))?;
    Ok(ChiSquareGof {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_sample(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + sd * z
            })
            .collect()
    }

    #[test]
    fn summary_hand_values() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.n, 4);
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(s.skewness.abs() < 1e-14);
        // Constant sample: degenerate moments reported as zero.
        let flat = summarize(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(flat.variance, 0.0);
        assert_eq!(flat.skewness, 0.0);
        assert_eq!(flat.excess_kurtosis, 0.0);
        assert!(summarize(&[1.0]).is_err());
    }

    #[test]
    fn summary_moments_of_gaussian_sample() {
        let xs = gaussian_sample(20000, 1.0, 2.0, 7);
        let s = summarize(&xs).unwrap();
        assert!((s.mean - 1.0).abs() < 0.06);
        assert!((s.variance - 4.0).abs() < 0.25);
        assert!(s.skewness.abs() < 0.08);
        assert!(s.excess_kurtosis.abs() < 0.15);
    }

    #[test]
    fn bootstrap_interval_brackets_point_and_is_deterministic() {
        let xs = gaussian_sample(50, 3.0, 1.0, 11);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let ci = bootstrap_ci(&xs, 0.95, 2000, 42, mean).unwrap();
        assert!(ci.lower <= ci.point && ci.point <= ci.upper);
        assert!(ci.upper - ci.lower < 1.0);
        let again = bootstrap_ci(&xs, 0.95, 2000, 42, mean).unwrap();
        assert_eq!(ci.lower, again.lower);
        assert_eq!(ci.upper, again.upper);
    }

    #[test]
    fn bootstrap_coverage_on_gaussian_data() {
        // Nominal 90 percent intervals for the mean of 40 Gaussian draws
        // should cover the true mean in well over 80 percent of trials.
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let trials = 200;
        let mut covered = 0;
        for t in 0..trials {
            let xs = gaussian_sample(40, 0.7, 1.3, 1000 + t);
            let ci = bootstrap_ci(&xs, 0.9, 800, 5000 + t, mean).unwrap();
            if ci.lower <= 0.7 && 0.7 <= ci.upper {
                covered += 1;
            }
        }
        let coverage = covered as f64 / trials as f64;
        assert!(coverage >= 0.8, "coverage only {coverage}");
    }

    #[test]
    fn bootstrap_width_shrinks_with_sample_size() {
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let narrow = gaussian_sample(400, 0.0, 1.0, 3);
        let wide = gaussian_sample(100, 0.0, 1.0, 3);
        let ci_n = bootstrap_ci(&narrow, 0.95, 2000, 9, mean).unwrap();
        let ci_w = bootstrap_ci(&wide, 0.95, 2000, 9, mean).unwrap();
        let ratio = (ci_w.upper - ci_w.lower) / (ci_n.upper - ci_n.lower);
        // Quadrupling the sample should halve the width, within slack.
        assert!((ratio - 2.0).abs() < 0.5, "width ratio {ratio}");
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = ols(&xs, &ys).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let xs = [16.0, 64.0, 256.0, 1024.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        let fit = log_log_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!(log_log_fit(&[1.0, -2.0, 3.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn ks_statistic_separates_distributions() {
        let good = gaussian_sample(2000, 0.0, 1.0, 21);
        let d_good = ks_statistic_normal(&good, 0.0, 1.0).unwrap();
        assert!(d_good < 0.04, "KS on matching sample: {d_good}");
        // Uniform [0,1] against a standard Gaussian is far off.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let uniform: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let d_bad = ks_statistic_normal(&uniform, 0.0, 1.0).unwrap();
        assert!(d_bad > 0.3, "KS on mismatched sample: {d_bad}");
    }

    #[test]
    fn chi_square_calibration() {
        // Counts drawn to match the expected split closely.
        let close = chi_square_gof(&[250, 251, 249, 250], &[0.25; 4]).unwrap();
        assert_eq!(close.dof, 3);
        assert!(close.statistic < 0.1);
        assert!(close.p_value > 0.9);
        let far = chi_square_gof(&[400, 100, 250, 250], &[0.25; 4]).unwrap();
        assert!(far.p_value < 1e-6);
        assert!(chi_square_gof(&[1, 2], &[0.5, 0.6]).is_err());
    }
}
