//! Continuum reference processes: a spectral Ornstein-Uhlenbeck field on a
//! torus, its time-integrated and quadratic functionals, and closed-form
//! variance oracles.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ensemble::run_indexed;
use crate::error::{invalid, Error, Result};
use crate::fields::TestFunction;
use crate::lattice::RandomSource;

pub const DEFAULT_TORUS: f64 = 64.0;
pub const DEFAULT_MODES: usize = 4096;
/// Minimum number of modes per width of the smallest identity approximation.
pub const MODES_PER_WIDTH: f64 = 16.0;
pub const MAX_FBM_GRID: usize = 4096;

/// Parameters of `dY = DΔY dt − a′∇Y dt + σ∇dM` on a torus of length `length`,
/// truncated to wavenumbers `2πj/length`, `|j| ≤ modes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOU {
    pub length: f64,
    pub modes: usize,
    pub d: f64,
    pub sigma2: f64,
    pub drift: f64,
}

/// Mode amplitudes `a_j`, `j = 0..=modes`; negative modes are the conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct OUState {
    pub time: f64,
    pub amps: Vec<Complex64>,
}

impl SpectralOU {
    pub fn new(length: f64, modes: usize, d: f64, sigma2: f64, drift: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("length", "torus length must be positive"));
        }
        if modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid("d", "diffusion coefficient must be positive"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(invalid("sigma2", "noise strength must be positive"));
        }
        if !drift.is_finite() {
            return Err(invalid("drift", "drift must be finite"));
        }
        Ok(Self {
            length,
            modes,
            d,
            sigma2,
            drift,
        })
    }

    /// Smallest mode count resolving identity approximations of width `eps`.
    pub fn modes_for(length: f64, eps: f64) -> usize {
        (MODES_PER_WIDTH * length / eps).ceil() as usize
    }

    /// Density of the stationary white noise, `σ²/2D`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma2 / (2.0 * self.d)
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.length
    }

    fn rate(&self, j: usize) -> Complex64 {
        let k = self.wavenumber(j);
        Complex64::new(self.d * k * k, self.drift * k)
    }

    pub fn check_resolution(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps < self.length / 2.0) {
            return Err(invalid("eps", format!("{eps} is not in (0, L/2)")));
        }
        let per_width = self.modes as f64 * eps / self.length;
        if per_width < MODES_PER_WIDTH {
            return Err(Error::Resolution(format!(
                "{per_width:.1} modes across width {eps}; need {MODES_PER_WIDTH} (modes ≥ {})",
                Self::modes_for(self.length, eps)
            )));
        }
        Ok(())
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> OUState {
        let q = self.stationary_variance();
        let mut amps = Vec::with_capacity(self.modes + 1);
        amps.push(Complex64::new(q.sqrt() * normal(rng), 0.0));
        for _ in 1..=self.modes {
            amps.push(complex_normal(rng) * q.sqrt());
        }
        OUState { time: 0.0, amps }
    }

    /// Exact transition over `dt`.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut OUState, dt: f64, rng: &mut R) {
        if dt == 0.0 {
            return;
        }
        let q = self.stationary_variance();
        for j in 1..=self.modes {
            let decay = (-self.rate(j) * dt).exp();
            let sd = (q * (1.0 - decay.norm_sqr())).sqrt();
            state.amps[j] = state.amps[j] * decay + complex_normal(rng) * sd;
        }
        state.time += dt;
    }

    /// `Y(u)` for a function with Fourier coefficients `coeffs[j] = L^{-1/2}∫u e^{-ikx}`.
    pub fn pair(&self, amps: &[Complex64], coeffs: &[Complex64]) -> f64 {
        let mut s = (amps[0] * coeffs[0].conj()).re;
        for j in 1..=self.modes.min(coeffs.len() - 1) {
            s += 2.0 * (amps[j] * coeffs[j].conj()).re;
        }
        s
    }

    /// Coefficients of `i_ε = ε⁻¹ 1_{(0, ε]}`.
    pub fn indicator_coefficients(&self, eps: f64) -> Vec<Complex64> {
        let norm = self.length.sqrt().recip();
        (0..=self.modes)
            .map(|j| {
                if j == 0 {
                    return Complex64::new(norm, 0.0);
                }
                let k = self.wavenumber(j);
                let z = Complex64::new(0.0, -k * eps);
                // (1 − e^{−ikε}) / (ikε)
                -expm1_complex(z) / (-z) * norm
            })
            .collect()
    }

    /// Coefficients of a test function, by quadrature on a grid of `points` nodes.
    pub fn coefficients_of(&self, u: &TestFunction, points: usize) -> Vec<Complex64> {
        let h = self.length / points as f64;
        let mut buf: Vec<Complex64> = (0..points)
            .map(|m| {
                let x = m as f64 * h;
                // evaluate on (−L/2, L/2] so centred supports are not split
                let x = if x > self.length / 2.0 { x - self.length } else { x };
                Complex64::new(u.eval(x), 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(points).process(&mut buf);
        let norm = h / self.length.sqrt();
        (0..=self.modes)
            .map(|j| if j < points / 2 { buf[j] * norm } else { Complex64::new(0.0, 0.0) })
            .collect()
    }

    /// `E[Y(u)²]` at stationarity under the truncated spectrum.
    pub fn pair_variance(&self, coeffs: &[Complex64]) -> f64 {
        let tail: f64 = coeffs.iter().skip(1).take(self.modes).map(|c| c.norm_sqr()).sum();
        self.stationary_variance() * (coeffs[0].norm_sqr() + 2.0 * tail)
    }

    /// `Cov(Y_t(u), Y_0(u))` at stationarity.
    pub fn pair_covariance(&self, coeffs: &[Complex64], t: f64) -> f64 {
        let tail: f64 = (1..=self.modes.min(coeffs.len() - 1))
            .map(|j| coeffs[j].norm_sqr() * (-self.rate(j) * t).exp().re)
            .sum();
        self.stationary_variance() * (coeffs[0].norm_sqr() + 2.0 * tail)
    }

    /// `E[(∫_0^t Y_s(u) ds)²]` at stationarity under the truncated spectrum.
    pub fn integral_variance(&self, coeffs: &[Complex64], t: f64) -> f64 {
        let q = self.stationary_variance();
        let mut s = coeffs[0].norm_sqr() * t * t;
        for j in 1..=self.modes.min(coeffs.len() - 1) {
            // E|∫a|² = 2q Re ∫_0^t (t − s) e^{−λs} ds
            let lam = self.rate(j);
            let z = lam * t;
            s += 2.0 * coeffs[j].norm_sqr() * (2.0 * t * t * phi2(z)).re;
        }
        q * s
    }
}

/// Simulate from stationarity and record the state every `dt` up to `horizon`.
pub fn simulate_ou(ou: &SpectralOU, dt: f64, horizon: f64, src: &RandomSource) -> Result<Vec<OUState>> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(invalid("dt", "step and horizon must be positive"));
    }
    let mut rng = src.rng();
    let mut state = ou.sample_stationary(&mut rng);
    let steps = (horizon / dt).round() as usize;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(state.clone());
    for _ in 0..steps {
        ou.step(&mut state, dt, &mut rng);
        path.push(state.clone());
    }
    Ok(path)
}

// Per-mode transition of (a, ∫a) over one checkpoint gap.
#[derive(Debug, Clone, Copy)]
struct JointStep {
    decay: Complex64,
    gain: Complex64,
    l11: f64,
    l21: Complex64,
    l22: f64,
}

impl JointStep {
    fn new(lam: Complex64, g: f64, dt: f64) -> Self {
        let z = lam * dt;
        let decay = (-z).exp();
        let gain = phi1(z) * dt;
        let (v11, v12, v22) = innovation_covariance(lam, g, dt);
        let l11 = v11.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { v12.conj() / l11 } else { Complex64::new(0.0, 0.0) };
        let l22 = (v22 - l21.norm_sqr()).max(0.0).sqrt();
        Self {
            decay,
            gain,
            l11,
            l21,
            l22,
        }
    }
}

// Covariances of ξ₁ = ∫_0^Δ e^{−λ(Δ−s)} dW and ξ₂ = ∫_0^Δ (1 − e^{−λ(Δ−s)})/λ dW
// for circular complex noise with E|dW|² = g ds: (E|ξ₁|², E[ξ₁ conj ξ₂], E|ξ₂|²).
fn innovation_covariance(lam: Complex64, g: f64, dt: f64) -> (f64, Complex64, f64) {
    let mu = lam.re;
    if (lam * dt).norm() <= 1.0 {
        let w = |u: f64| (-lam * u).exp();
        let f = |u: f64| phi1(lam * u) * u;
        let v11 = gk15(|u| w(u).norm_sqr(), 0.0, dt).0;
        let v12 = Complex64::new(
            gk15(|u| (w(u) * f(u).conj()).re, 0.0, dt).0,
            gk15(|u| (w(u) * f(u).conj()).im, 0.0, dt).0,
        );
        let v22 = gk15(|u| f(u).norm_sqr(), 0.0, dt).0;
        return (g * v11, v12 * g, g * v22);
    }
    let e = |l: Complex64| phi1(l * dt) * dt;
    let e_lam = e(lam);
    let e_2mu = e(Complex64::new(2.0 * mu, 0.0)).re;
    let v11 = e_2mu;
    let v12 = (e_lam - e_2mu) / lam.conj();
    let v22 = (dt - 2.0 * e_lam.re + e_2mu) / lam.norm_sqr();
    (g * v11, v12 * g, g * v22)
}

/// Samples of `Z_t^ε = ∫_0^t Y_s(i_ε) ds` for each width in `eps` on a shared
/// path: `out[path][eps][time]`. Every mode is advanced by its exact joint
/// Gaussian transition, so there is no time-discretization error.
pub fn z_epsilon_ou(
    ou: &SpectralOU,
    eps: &[f64],
    times: &[f64],
    paths: usize,
    src: &RandomSource,
    workers: Option<usize>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    for &e in eps {
        ou.check_resolution(e)?;
    }
    check_times(times)?;
    let coeffs: Vec<Vec<Complex64>> = eps.iter().map(|&e| ou.indicator_coefficients(e)).collect();
    let q = ou.stationary_variance();
    let gaps: Vec<f64> = std::iter::once(times[0]).chain(times.windows(2).map(|w| w[1] - w[0])).collect();
    let steps: Vec<Vec<JointStep>> = gaps
        .iter()
        .map(|&dt| {
            (1..=ou.modes)
                .map(|j| {
                    let k = ou.wavenumber(j);
                    JointStep::new(ou.rate(j), 2.0 * ou.d * q * k * k, dt)
                })
                .collect()
        })
        .collect();
    run_indexed(paths, workers, |p| {
        let mut rng = src.stream(p as u64).rng();
        let state = ou.sample_stationary(&mut rng);
        let mut amps = state.amps;
        let mut integ = vec![Complex64::new(0.0, 0.0); ou.modes + 1];
        let mut out = vec![Vec::with_capacity(times.len()); eps.len()];
        for (gi, &t) in times.iter().enumerate() {
            integ[0] = amps[0] * t;
            for j in 1..=ou.modes {
                let s = &steps[gi][j - 1];
                let (w1, w2) = (complex_normal(&mut rng), complex_normal(&mut rng));
                integ[j] += amps[j] * s.gain + s.l21 * w1 + w2 * s.l22;
                amps[j] = amps[j] * s.decay + w1 * s.l11;
            }
            for (e, c) in coeffs.iter().enumerate() {
                out[e].push(ou.pair(&integ, c));
            }
        }
        Ok(out)
    })
}

/// Samples of `A_t^ε(u) = ∫_0^t ∫ u(x)(Y_s(i_ε(x))² − c_ε) dx ds` for each
/// width on a shared path: `out[path][eps][time]`. The field is advanced by
/// exact mode transitions; the time integral uses the trapezoid rule with step
/// at most `ε²/(16D)` and the spatial integral a grid of spacing at most `ε/8`.
/// `c_ε` is the exact stationary second moment of `Y(i_ε)` under the truncated
/// spectrum, so each sample is mean-zero.
pub fn quadratic_field_ou(
    ou: &SpectralOU,
    eps: &[f64],
    u: &TestFunction,
    times: &[f64],
    paths: usize,
    src: &RandomSource,
    workers: Option<usize>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let min_eps = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    if eps.is_empty() {
        return Err(invalid("eps", "need at least one width"));
    }
    for &e in eps {
        ou.check_resolution(e)?;
    }
    check_times(times)?;
    u.validate()?;
    if u.cutoff() >= ou.length / 2.0 {
        return Err(Error::Resolution(format!("test function support exceeds half the torus {}", ou.length)));
    }
    let grid = ((8.0 * ou.length / min_eps).ceil() as usize).max(2 * ou.modes + 2).next_power_of_two();
    let h = ou.length / grid as f64;
    let weights: Vec<(usize, f64)> = (0..grid)
        .filter_map(|m| {
            let x = m as f64 * h;
            let x = if x > ou.length / 2.0 { x - ou.length } else { x };
            let w = u.eval(x);
            (w != 0.0).then_some((m, w * h))
        })
        .collect();
    // Y(i_ε(x)) = Σ_j a_j c_j e^{ikx} with c_j = conj of the indicator coefficients
    let kernels: Vec<Vec<Complex64>> = eps
        .iter()
        .map(|&e| ou.indicator_coefficients(e).into_iter().map(|c| c.conj()).collect())
        .collect();
    let centering: Vec<f64> = kernels.iter().map(|c| ou.pair_variance(c)).collect();
    let dt_max = min_eps * min_eps / (16.0 * ou.d);
    let fft = FftPlanner::new().plan_fft_inverse(grid);
    run_indexed(paths, workers, |p| {
        let mut rng = src.stream(p as u64).rng();
        let mut state = ou.sample_stationary(&mut rng);
        let mut buf = vec![Complex64::new(0.0, 0.0); grid];
        let integrand = |amps: &[Complex64], buf: &mut Vec<Complex64>| -> Vec<f64> {
            kernels
                .iter()
                .zip(&centering)
                .map(|(c, &centre)| {
                    buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                    for j in 1..=ou.modes {
                        buf[j] = amps[j] * c[j];
                    }
                    fft.process(buf);
                    let zero = (amps[0] * c[0]).re;
                    weights
                        .iter()
                        .map(|&(m, w)| {
                            let y = zero + 2.0 * buf[m].re;
                            w * (y * y - centre)
                        })
                        .sum()
                })
                .collect()
        };
        let mut acc = vec![0.0; eps.len()];
        let mut out = vec![Vec::with_capacity(times.len()); eps.len()];
        let mut prev = integrand(&state.amps, &mut buf);
        let mut now = 0.0;
        for &t in times {
            let n = ((t - now) / dt_max).ceil().max(1.0) as usize;
            let dt = (t - now) / n as f64;
            for _ in 0..n {
                ou.step(&mut state, dt, &mut rng);
                let next = integrand(&state.amps, &mut buf);
                for e in 0..eps.len() {
                    acc[e] += 0.5 * dt * (prev[e] + next[e]);
                }
                prev = next;
            }
            now = t;
            for e in 0..eps.len() {
                out[e].push(acc[e]);
            }
        }
        Ok(out)
    })
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times", "checkpoints must be nonnegative and increasing"));
    }
    Ok(())
}

/// `E[Z_t²] = χ√(2/π) ∫_0^t (t−s) e^{−a′²s/2} s^{−1/2} ds`, evaluated after
/// the substitution `s = v²`.
pub fn variance_oracle_drift(t: f64, drift: f64, chi: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a2 = drift * drift;
    let integral = integrate(|v| 2.0 * (t - v * v) * (-a2 * v * v / 2.0).exp(), 0.0, t.sqrt(), 1e-12);
    chi * (2.0 / PI).sqrt() * integral
}

/// Amplitude `C(D, χ) = (4/3)√(2/π)·χ/√(2D)` of the `t^{3/2}` variance law.
pub fn fbm_amplitude(d: f64, chi: f64) -> f64 {
    4.0 / 3.0 * (2.0 / PI).sqrt() * chi / (2.0 * d).sqrt()
}

pub fn variance_oracle_fbm(t: f64, d: f64, chi: f64) -> f64 {
    fbm_amplitude(d, chi) * t.max(0.0).powf(1.5)
}

/// Covariance of fractional Brownian motion with Hurst index 3/4 and `Var(Z_t) = C t^{3/2}`.
pub fn fbm_covariance(s: f64, t: f64, c: f64) -> f64 {
    hurst_covariance(s, t, 0.75, c)
}

pub fn hurst_covariance(s: f64, t: f64, hurst: f64, c: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * c * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2))
}

/// The fBM reference for a given amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmReference {
    pub hurst: f64,
    pub amplitude: f64,
}

impl FbmReference {
    pub fn new(amplitude: f64) -> Self {
        Self { hurst: 0.75, amplitude }
    }

    pub fn covariance(&self, s: f64, t: f64) -> f64 {
        hurst_covariance(s, t, self.hurst, self.amplitude)
    }

    pub fn covariance_matrix(&self, times: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(times.len(), times.len(), |i, j| self.covariance(times[i], times[j]))
    }
}

/// Exact Gaussian paths with covariance `(C/2)(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn synthetic_fbm(hurst: f64, c: f64, times: &[f64], paths: usize, src: &RandomSource) -> Result<Vec<Vec<f64>>> {
    if times.len() > MAX_FBM_GRID {
        return Err(invalid("times", format!("grid of {} exceeds {MAX_FBM_GRID}", times.len())));
    }
    if !(hurst > 0.0 && hurst < 1.0) || c < 0.0 {
        return Err(invalid("hurst", "need 0 < H < 1 and C ≥ 0"));
    }
    check_times(times)?;
    if c == 0.0 {
        return Ok(vec![vec![0.0; times.len()]; paths]);
    }
    let cov = DMatrix::from_fn(times.len(), times.len(), |i, j| hurst_covariance(times[i], times[j], hurst, c));
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut rng = src.rng();
    Ok((0..paths)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(times.len(), |_, _| normal(&mut rng));
            (&l * z).iter().copied().collect()
        })
        .collect())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

// Circular complex Gaussian with E|w|² = 1.
fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(normal(rng), normal(rng)) * std::f64::consts::FRAC_1_SQRT_2
}

fn expm1_complex(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        z * (1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0)))
    } else {
        z.exp() - 1.0
    }
}

// φ₁(z) = (1 − e^{−z})/z
fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1.0 {
        series(z, 1)
    } else {
        -expm1_complex(-z) / z
    }
}

// φ₂(z) = (z − 1 + e^{−z})/z², so that ∫_0^t (t−s)e^{−λs} ds = t²φ₂(λt)
fn phi2(z: Complex64) -> Complex64 {
    if z.norm() < 1.0 {
        series(z, 2)
    } else {
        (z - 1.0 + (-z).exp()) / (z * z)
    }
}

// Σ_{m≥0} (−z)^m / (m + p)!
fn series(z: Complex64, p: u32) -> Complex64 {
    let mut fact = (1..=p).map(f64::from).product::<f64>();
    let mut term = Complex64::new(1.0 / fact, 0.0);
    let mut sum = term;
    for m in 1..30 {
        fact = (m + p) as f64;
        term = term * (-z) / fact;
        sum += term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod 15-point estimate and its difference from the embedded 7-point Gauss rule.
pub fn gk15(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, tol: f64) -> f64 {
    fn go(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            return v;
        }
        let m = 0.5 * (a + b);
        go(f, a, m, tol / 2.0, depth + 1) + go(f, m, b, tol / 2.0, depth + 1)
    }
    go(f, a, b, tol, 0)
}
