//! Ensemble statistics over independent trajectories.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const MIN_SUMMARY_SAMPLES: usize = 30;
pub const MIN_NORMALITY_SAMPLES: usize = 1000;
pub const Z95: f64 = 1.959_963_984_540_054;
/// Largest tolerated max/min spread of per-point ratios in [`bound_ratio`].
pub const RATIO_SPREAD_LIMIT: f64 = 10.0;

/// A sample mean with its standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl MeanEstimate {
    /// Mean of i.i.d. samples; the jackknife error of a mean is the classical one.
    pub fn of(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
        let stderr = (ss / (n as f64 - 1.0) / n as f64).sqrt();
        Ok(Self {
            count: n,
            mean,
            stderr,
            ci_lo: mean - Z95 * stderr,
            ci_hi: mean + Z95 * stderr,
        })
    }

    /// Estimate of `E[X²]`.
    pub fn second_moment(samples: &[f64]) -> Result<Self> {
        let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
        Self::of(&sq)
    }

    pub fn relative_error(&self) -> f64 {
        self.stderr / self.mean.abs()
    }
}

/// Per-checkpoint statistics of an ensemble of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Jackknife 95% interval of each variance.
    pub variance_ci: Vec<(f64, f64)>,
    pub second_moment: Vec<MeanEstimate>,
    pub covariance: Vec<Vec<f64>>,
    /// Set when some checkpoint has zero spread, so its interval is a point.
    pub degenerate: bool,
}

/// Summarize `samples[trajectory][checkpoint]`.
pub fn summarize(samples: &[Vec<f64>]) -> Result<EnsembleSummary> {
    let n = samples.len();
    if n < MIN_SUMMARY_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SUMMARY_SAMPLES,
            got: n,
        });
    }
    let m = samples[0].len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Unsupported("trajectories with different checkpoint counts".into()));
    }
    let column = |j: usize| samples.iter().map(|s| s[j]).collect::<Vec<f64>>();
    let mut mean = Vec::with_capacity(m);
    let mut variance = Vec::with_capacity(m);
    let mut variance_ci = Vec::with_capacity(m);
    let mut second_moment = Vec::with_capacity(m);
    let mut degenerate = false;
    for j in 0..m {
        let col = column(j);
        let (v, se) = jackknife_variance(&col);
        mean.push(col.iter().sum::<f64>() / n as f64);
        variance.push(v);
        variance_ci.push(((v - Z95 * se).max(0.0), v + Z95 * se));
        degenerate |= v == 0.0;
        second_moment.push(MeanEstimate::second_moment(&col)?);
    }
    let mut covariance = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let c = samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (n as f64 - 1.0);
            covariance[a][b] = c;
            covariance[b][a] = c;
        }
    }
    Ok(EnsembleSummary {
        count: n,
        mean,
        variance,
        variance_ci,
        second_moment,
        covariance,
        degenerate,
    })
}

/// Unbiased variance and its leave-one-out jackknife standard error.
pub fn jackknife_variance(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let var = ss / (n - 1.0);
    if x.len() < 3 {
        return (var, f64::INFINITY);
    }
    // dropping x_i removes n/(n-1)(x_i - mean)^2 from the sum of squares
    let loo: Vec<f64> = x.iter().map(|v| (ss - n / (n - 1.0) * (v - mean).powi(2)) / (n - 2.0)).collect();
    let loo_mean = loo.iter().sum::<f64>() / n;
    let spread: f64 = loo.iter().map(|v| (v - loo_mean).powi(2)).sum();
    (var, ((n - 1.0) / n * spread).sqrt())
}

/// Ordinary least squares on `(ln x, ln v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

pub fn scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: points.len(),
        });
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositive { x, y });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    Ok(linear_fit(&logs))
}

pub(crate) fn linear_fit(points: &[(f64, f64)]) -> ScalingFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_stderr = if points.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    ScalingFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub hurst: f64,
    pub stderr: f64,
    pub fit: ScalingFit,
    /// The estimate is outside the open interval (0, 1).
    pub out_of_model: bool,
}

/// Half the log-log slope of `E[Z_t²]` against `t` over a dyadic grid.
/// `paths[i][j]` is path `i` at `times[j]`.
pub fn hurst_estimate(paths: &[Vec<f64>], times: &[f64]) -> Result<HurstEstimate> {
    if times.len() < 5 {
        return Err(Error::TooFewSamples {
            needed: 5,
            got: times.len(),
        });
    }
    if times.windows(2).any(|w| (w[1] / w[0] - 2.0).abs() > 1e-9) {
        return Err(crate::error::invalid("times", "Hurst grid must be dyadic"));
    }
    if paths.is_empty() || paths.iter().any(|p| p.len() != times.len()) {
        return Err(Error::TooFewSamples {
            needed: 1,
            got: paths.len(),
        });
    }
    let points: Vec<(f64, f64)> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, paths.iter().map(|p| p[j] * p[j]).sum::<f64>() / paths.len() as f64))
        .collect();
    let fit = scaling_exponent(&points)?;
    let hurst = fit.slope / 2.0;
    Ok(HurstEstimate {
        hurst,
        stderr: fit.slope_stderr / 2.0,
        fit,
        out_of_model: !(hurst > 0.0 && hurst < 1.0 - 1e-6),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    /// Anderson-Darling statistic with the small-sample correction.
    pub statistic: f64,
    pub p_value: f64,
}

/// Anderson-Darling test of normality with estimated mean and variance.
pub fn normality_test(samples: &[f64]) -> Result<NormalityTest> {
    let n = samples.len();
    if n < MIN_NORMALITY_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_NORMALITY_SAMPLES,
            got: n,
        });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if sd == 0.0 {
        return Ok(NormalityTest {
            statistic: f64::INFINITY,
            p_value: 0.0,
        });
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    // ln Φ and ln(1-Φ) through erfc keep precision in both tails
    let ln_cdf = |x: f64| (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln();
    let mut s = 0.0;
    for i in 0..n {
        let k = (2 * i + 1) as f64;
        s += k * (ln_cdf(z[i]) + ln_cdf(-z[n - 1 - i]));
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Ok(NormalityTest {
        statistic: a,
        p_value: p.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub grid: f64,
    pub lhs: f64,
    pub lhs_ci_hi: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRatio {
    pub points: Vec<RatioPoint>,
    /// Largest CI-upper to bound ratio: the constant the data certifies.
    pub fitted_c: f64,
    /// max/min of the per-point `lhs / bound` ratios.
    pub spread: f64,
    pub decades: f64,
    pub pass: bool,
}

/// Test an inequality `LHS(g) ≤ c·B(g)` with unknown `c` as a bounded-ratio property.
pub fn bound_ratio(grid: &[f64], lhs: &[MeanEstimate], bound: impl Fn(f64) -> f64) -> Result<BoundRatio> {
    if grid.len() != lhs.len() || grid.is_empty() {
        return Err(crate::error::invalid("grid", "grid and estimates must be nonempty and aligned"));
    }
    let mut points = Vec::with_capacity(grid.len());
    for (&g, est) in grid.iter().zip(lhs) {
        let b = bound(g);
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::NonPositive { x: g, y: b });
        }
        points.push(RatioPoint {
            grid: g,
            lhs: est.mean,
            lhs_ci_hi: est.ci_hi,
            bound: b,
            ratio: est.mean / b,
        });
    }
    let fitted_c = points.iter().map(|p| p.lhs_ci_hi / p.bound).fold(f64::NEG_INFINITY, f64::max);
    let hi = points.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
    let lo = points.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let gmax = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gmin = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BoundRatio {
        points,
        fitted_c,
        spread,
        decades: (gmax / gmin).log10(),
        pass: spread <= RATIO_SPREAD_LIMIT && fitted_c.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let s = summarize(&vec![vec![3.0, 1.0]; 40]).unwrap();
        assert_eq!(s.variance, vec![0.0, 0.0]);
        assert!(s.degenerate);
        assert_eq!(s.variance_ci[0], (0.0, 0.0));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(summarize(&vec![vec![0.0]; 29]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn standard_normal_variance() {
        let x = normals(10_000, 1);
        let s = summarize(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        assert!((s.variance[0] - 1.0).abs() < 0.03);
        let (lo, hi) = s.variance_ci[0];
        assert!(lo <= s.variance[0] && s.variance[0] <= hi);
        // jackknife error of a variance is close to sqrt(2/n) for Gaussians
        assert!((hi - lo) / (2.0 * Z95) < 1.3 * (2.0f64 / 10_000.0).sqrt());
    }

    #[test]
    fn summary_is_shuffle_invariant() {
        let x = normals(300, 2);
        let rows: Vec<Vec<f64>> = x.chunks(3).map(|c| c.to_vec()).collect();
        let mut rev = rows.clone();
        rev.reverse();
        let a = summarize(&rows).unwrap();
        let b = summarize(&rev).unwrap();
        for j in 0..3 {
            assert_relative_eq!(a.variance[j], b.variance[j], max_relative = 1e-12);
            assert_relative_eq!(a.mean[j], b.mean[j], epsilon = 1e-14);
        }
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = normals(50, 3);
        let (v, se) = jackknife_variance(&x);
        let n = x.len() as f64;
        let loo: Vec<f64> = (0..x.len())
            .map(|i| {
                let y: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let m = y.iter().sum::<f64>() / (n - 1.0);
                y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 2.0)
            })
            .collect();
        let lm = loo.iter().sum::<f64>() / n;
        let brute = ((n - 1.0) / n * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
        assert_relative_eq!(se, brute, max_relative = 1e-9);
        assert_relative_eq!(v, x.iter().map(|a| (a - x.iter().sum::<f64>() / n).powi(2)).sum::<f64>() / (n - 1.0), max_relative = 1e-12);
    }

    #[test]
    fn exact_power_laws() {
        let fit = scaling_exponent(&[(1.0, 1.0), (4.0, 8.0), (16.0, 64.0)]).unwrap();
        assert_relative_eq!(fit.slope, 1.5, epsilon = 1e-12);
        let fit = scaling_exponent(&[(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)]).unwrap();
        assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(matches!(scaling_exponent(&[(1.0, 0.0), (2.0, 1.0), (3.0, 1.0)]), Err(Error::NonPositive { .. })));
    }

    #[test]
    fn noisy_power_law() {
        let noise = normals(12, 4);
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let t = 2f64.powf(i as f64 / 2.0 - 2.0);
                (t, t.powf(1.5) * (0.03 * noise[i]).exp())
            })
            .collect();
        let fit = scaling_exponent(&pts).unwrap();
        assert!((fit.slope - 1.5).abs() < 0.05, "{fit:?}");
        assert!(fit.slope_stderr.is_finite());
    }

    #[test]
    fn linear_drift_is_out_of_model() {
        let times = [0.25, 0.5, 1.0, 2.0, 4.0];
        let paths = vec![times.iter().map(|t| 3.0 * t).collect::<Vec<f64>>(); 10];
        let h = hurst_estimate(&paths, &times).unwrap();
        assert_relative_eq!(h.hurst, 1.0, epsilon = 1e-12);
        assert!(h.out_of_model);
        assert!(hurst_estimate(&paths, &[0.25, 0.5, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn brownian_hurst() {
        let times = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let paths: Vec<Vec<f64>> = (0..20_000)
            .map(|_| {
                let (mut w, mut last) = (0.0, 0.0f64);
                times
                    .iter()
                    .map(|&t| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        w += z * (t - last).sqrt();
                        last = t;
                        w
                    })
                    .collect()
            })
            .collect();
        let h = hurst_estimate(&paths, &times).unwrap();
        assert!((h.hurst - 0.5).abs() < 0.02, "{h:?}");
        assert!(!h.out_of_model);
    }

    #[test]
    fn normality_on_gaussian_and_exponential() {
        let mut ps = Vec::new();
        for seed in 0..200 {
            ps.push(normality_test(&normals(1000, 100 + seed)).unwrap().p_value);
        }
        // p-values of a valid test are roughly uniform
        let below = |c: f64| ps.iter().filter(|&&p| p < c).count() as f64 / ps.len() as f64;
        assert!(below(0.05) < 0.12, "{}", below(0.05));
        assert!((below(0.5) - 0.5).abs() < 0.12, "{}", below(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let exp = Exp::new(1.0).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..1000).map(|_| exp.sample(&mut rng)).collect();
            assert!(normality_test(&x).unwrap().p_value < 0.01);
        }
        assert!(normality_test(&[0.0; 999]).is_err());
    }

    #[test]
    fn anderson_darling_reference_value() {
        // statistic of the evenly spaced normal scores has a known tiny value
        let z: Vec<f64> = (1..=1000)
            .map(|i| {
                let p = (i as f64 - 0.5) / 1000.0;
                statrs::function::erf::erf_inv(2.0 * p - 1.0) * std::f64::consts::SQRT_2
            })
            .collect();
        let t = normality_test(&z).unwrap();
        assert!(t.statistic < 0.05, "{t:?}");
        assert!(t.p_value > 0.99);
    }

    fn exact(v: f64) -> MeanEstimate {
        MeanEstimate {
            count: 100,
            mean: v,
            stderr: 0.0,
            ci_lo: v,
            ci_hi: v,
        }
    }

    #[test]
    fn bound_ratio_examples() {
        let grid: Vec<f64> = (0..10).map(|i| 2f64.powi(i + 1)).collect();
        let b = |g: f64| g + 1.0 / (g * g);
        let lhs: Vec<MeanEstimate> = grid.iter().map(|&g| exact(2.0 * b(g))).collect();
        let r = bound_ratio(&grid, &lhs, b).unwrap();
        assert_relative_eq!(r.fitted_c, 2.0, epsilon = 1e-12);
        assert!(r.pass);
        let grid: Vec<f64> = (0..11).map(|i| 2.0 * 2f64.powi(i)).collect();
        let lhs: Vec<MeanEstimate> = grid.iter().map(|&g| exact(b(g) * g.ln())).collect();
        let r = bound_ratio(&grid, &lhs, b).unwrap();
        assert!(r.decades >= 3.0);
        assert!(!r.pass, "{}", r.spread);
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 30..60)) {
            let s = summarize(&rows).unwrap();
            let m = nalgebra::DMatrix::from_fn(3, 3, |i, j| s.covariance[i][j]);
            prop_assert!((m.clone() - m.transpose()).abs().max() == 0.0);
            let eig = m.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
            for j in 0..3 {
                prop_assert!(s.variance[j] >= 0.0);
                prop_assert!(s.variance_ci[j].0 <= s.variance[j] && s.variance[j] <= s.variance_ci[j].1);
            }
        }

        #[test]
        fn scaling_fit_recovers_exponent(a in -3.0f64..3.0, c in 0.1f64..10.0) {
            let pts: Vec<(f64, f64)> = (0..6).map(|i| { let x = 2f64.powi(i); (x, c * x.powf(a)) }).collect();
            let fit = scaling_exponent(&pts).unwrap();
            prop_assert!((fit.slope - a).abs() < 1e-10);
        }
    }
}
