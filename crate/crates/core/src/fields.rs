//! Fluctuation observables as exact-in-time accumulators.
//!
//! Every observer keeps an integrand that is piecewise constant between
//! events. [`crate::dynamics::evolve`] multiplies the current value by the
//! waiting time and the observer's `scale` is applied at report time.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{mobility, Configuration, ModelParams};
use crate::localfn::LocalFunction;

/// A piecewise-constant integrand maintained incrementally along a trajectory.
pub trait Observer: Send {
    fn id(&self) -> &str;
    /// Rebuild all internal state from `cfg`.
    fn reset(&mut self, cfg: &Configuration);
    /// Current integrand.
    fn value(&self) -> f64;
    /// `cfg` is the configuration after sites `a` and `b` were exchanged.
    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize);
    /// Factor applied to the accumulated microscopic-time integral.
    fn scale(&self) -> f64;
    /// Integrand recomputed from scratch, for drift checks.
    fn recompute(&self, cfg: &Configuration) -> f64;
}

fn ring_offset(cfg: &Configuration, origin: i64, s: usize) -> usize {
    cfg.wrap(s as i64 - origin)
}

/// Γ_t^n(f) = n^{−3/2} ∫_0^{tn²} (f(η_s) − φ_f(ρ)) ds, with f tracked at a fixed site.
#[derive(Debug, Clone)]
pub struct GammaObserver {
    id: String,
    f: LocalFunction,
    site: usize,
    centering: f64,
    scale: f64,
    value: f64,
}

impl GammaObserver {
    pub fn new(id: impl Into<String>, f: LocalFunction, params: &ModelParams) -> Result<Self> {
        Self::at_site(id, f, params, 0)
    }

    pub fn at_site(id: impl Into<String>, f: LocalFunction, params: &ModelParams, site: usize) -> Result<Self> {
        if f.diameter() > params.ring_size {
            return Err(Error::SupportOverflow {
                ring: params.ring_size,
                reason: format!("local function spans {} sites", f.diameter()),
            });
        }
        let centering = f.phi().eval(params.rho);
        Ok(Self {
            id: id.into(),
            f,
            site,
            centering,
            scale: (params.n as f64).powf(-1.5),
            value: 0.0,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn touches(&self, cfg: &Configuration, s: usize) -> bool {
        let origin = self.site as i64 + self.f.min_site() as i64;
        ring_offset(cfg, origin, s) < self.f.diameter()
    }
}

impl Observer for GammaObserver {
    fn id(&self) -> &str {
        &self.id
    }

    fn reset(&mut self, cfg: &Configuration) {
        self.value = self.recompute(cfg);
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize) {
        if self.touches(cfg, a) || self.touches(cfg, b) {
            self.value = self.recompute(cfg);
        }
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn recompute(&self, cfg: &Configuration) -> f64 {
        self.f.evaluate_at(cfg, self.site) - self.centering
    }
}

/// A function of the particle count in a box of consecutive sites,
/// `table[m]` for `m` particles. Covers Z^{n,ε} (linear table) and ψ_f(ℓ).
#[derive(Debug, Clone)]
pub struct BoxObserver {
    id: String,
    start: i64,
    len: usize,
    table: Vec<f64>,
    scale: f64,
    count: usize,
}

impl BoxObserver {
    /// Box of sites `start, …, start+len−1` (relative to the origin).
    pub fn new(id: impl Into<String>, start: i64, len: usize, table: Vec<f64>, scale: f64) -> Result<Self> {
        if len == 0 || table.len() != len + 1 {
            return Err(invalid("table", format!("need {} entries for a box of {len}", len + 1)));
        }
        Ok(Self {
            id: id.into(),
            start,
            len,
            table,
            scale,
            count: 0,
        })
    }

    /// Z^{n,ε}: n^{−3/2} ∫ (η^{εn}(0) − ρ), box {1, …, ⌊εn⌋}.
    pub fn z_box(id: impl Into<String>, eps: f64, params: &ModelParams) -> Result<Self> {
        let len = IdentityApprox::new(eps, 0.0)?.box_len(params.n)?;
        if len > params.ring_size {
            return Err(Error::SupportOverflow {
                ring: params.ring_size,
                reason: format!("box of {len} sites"),
            });
        }
        let table = (0..=len).map(|m| m as f64 / len as f64 - params.rho).collect();
        Self::new(id, 1, len, table, (params.n as f64).powf(-1.5))
    }

    /// ∫ (ψ_f(ℓ) − φ_f(ρ)) with the box placed on the shifted support of `f`.
    pub fn psi_box(id: impl Into<String>, f: &LocalFunction, ell: usize, params: &ModelParams) -> Result<Self> {
        let centering = f.phi().eval(params.rho);
        let table = (0..=ell)
            .map(|m| f.psi(ell, m).map(|v| v - centering))
            .collect::<Result<Vec<_>>>()?;
        Self::new(id, f.min_site() as i64, ell, table, (params.n as f64).powf(-1.5))
    }

    pub fn box_len(&self) -> usize {
        self.len
    }

    fn count_in(&self, cfg: &Configuration) -> usize {
        let first = cfg.wrap(self.start);
        // box_count counts sites x+1..x+ℓ
        cfg.box_count(cfg.wrap(first as i64 - 1), self.len).expect("box fits the ring")
    }
}

impl Observer for BoxObserver {
    fn id(&self) -> &str {
        &self.id
    }

    fn reset(&mut self, cfg: &Configuration) {
        self.count = self.count_in(cfg);
    }

    fn value(&self) -> f64 {
        self.table[self.count]
    }

    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize) {
        for s in [a, b] {
            if ring_offset(cfg, self.start, s) < self.len {
                if cfg.get(s) == 1 {
                    self.count += 1;
                } else {
                    self.count -= 1;
                }
            }
        }
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn recompute(&self, cfg: &Configuration) -> f64 {
        self.table[self.count_in(cfg)]
    }
}

/// Λ^{n,f}(u): integrand Σ_x (τ_x f − φ_f(ρ)) u(x/n), reported with n^{−2}.
#[derive(Debug, Clone)]
pub struct LambdaObserver {
    id: String,
    f: LocalFunction,
    weights: Weights,
    centering: f64,
    scale: f64,
    vals: Vec<f64>,
    sum: f64,
}

impl LambdaObserver {
    pub fn new(id: impl Into<String>, f: LocalFunction, u: &TestFunction, params: &ModelParams) -> Result<Self> {
        let weights = u.weights(params.n, params.ring_size)?;
        let span = weights.values.len() + f.diameter();
        if span >= params.ring_size {
            return Err(Error::SupportOverflow {
                ring: params.ring_size,
                reason: format!("test function and local function cover {span} sites"),
            });
        }
        let centering = f.phi().eval(params.rho);
        let vals = vec![0.0; weights.values.len()];
        Ok(Self {
            id: id.into(),
            f,
            weights,
            centering,
            scale: (params.n as f64).powi(-2),
            vals,
            sum: 0.0,
        })
    }

    /// Require φ′_f(ρ) = 0, the hypothesis of the quadratic comparison.
    pub fn quadratic_regime(self, rho: f64, tol: f64) -> Result<Self> {
        let d1 = self.f.phi().d1(rho);
        if d1.abs() > tol {
            return Err(invalid("f", format!("φ′_f(ρ) = {d1} is not zero")));
        }
        Ok(self)
    }

    fn site(&self, cfg: &Configuration, p: usize) -> usize {
        cfg.wrap(self.weights.first + p as i64)
    }
}

impl Observer for LambdaObserver {
    fn id(&self) -> &str {
        &self.id
    }

    fn reset(&mut self, cfg: &Configuration) {
        let mut sum = 0.0;
        for p in 0..self.vals.len() {
            let v = self.f.evaluate_at(cfg, self.site(cfg, p)) - self.centering;
            self.vals[p] = v;
            sum += self.weights.values[p] * v;
        }
        self.sum = sum;
    }

    fn value(&self) -> f64 {
        self.sum
    }

    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize) {
        let (lo, hi) = (self.f.min_site() as i64, self.f.max_site() as i64);
        if self.f.support().is_empty() {
            return;
        }
        for s in [a, b] {
            // translates τ_y f with y + lo ≤ s ≤ y + hi
            for d in lo..=hi {
                let p = cfg.wrap(s as i64 - d - self.weights.first);
                if p < self.vals.len() {
                    let w = self.weights.values[p];
                    let v = self.f.evaluate_at(cfg, self.site(cfg, p)) - self.centering;
                    self.sum += w * (v - self.vals[p]);
                    self.vals[p] = v;
                }
            }
        }
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn recompute(&self, cfg: &Configuration) -> f64 {
        (0..self.vals.len())
            .map(|p| self.weights.values[p] * (self.f.evaluate_at(cfg, self.site(cfg, p)) - self.centering))
            .sum()
    }
}

/// A^{n,ε}(u): integrand Σ_x ((η^{εn}(x) − ρ)² − χ/(εn)) u(x/n), reported with n^{−2}.
#[derive(Debug, Clone)]
pub struct QuadraticFieldObserver {
    id: String,
    len: usize,
    rho: f64,
    weights: Weights,
    offset: f64,
    counts: Vec<usize>,
    sum: f64,
    scale: f64,
}

impl QuadraticFieldObserver {
    pub fn new(id: impl Into<String>, eps: f64, u: &TestFunction, params: &ModelParams) -> Result<Self> {
        let len = IdentityApprox::new(eps, 0.0)?.box_len(params.n)?;
        let weights = u.weights(params.n, params.ring_size)?;
        let span = weights.values.len() + len;
        if span >= params.ring_size {
            return Err(Error::SupportOverflow {
                ring: params.ring_size,
                reason: format!("test function and boxes cover {span} sites"),
            });
        }
        let offset = -mobility(params.rho) / len as f64 * weights.values.iter().sum::<f64>();
        let counts = vec![0; weights.values.len()];
        Ok(Self {
            id: id.into(),
            len,
            rho: params.rho,
            weights,
            offset,
            counts,
            sum: 0.0,
            scale: (params.n as f64).powi(-2),
        })
    }

    pub fn box_len(&self) -> usize {
        self.len
    }

    #[inline]
    fn sq(&self, c: usize) -> f64 {
        let d = c as f64 / self.len as f64 - self.rho;
        d * d
    }

    // Boxes {x+1, …, x+L} with x in [lo, hi] (unwrapped) gain `delta` particles.
    fn bump_range(&mut self, cfg: &Configuration, lo: i64, hi: i64, delta: i64) {
        for x in lo..=hi {
            let p = cfg.wrap(x - self.weights.first);
            if p < self.counts.len() {
                let old = self.counts[p];
                let new = (old as i64 + delta) as usize;
                self.counts[p] = new;
                self.sum += self.weights.values[p] * (self.sq(new) - self.sq(old));
            }
        }
    }
}

impl Observer for QuadraticFieldObserver {
    fn id(&self) -> &str {
        &self.id
    }

    fn reset(&mut self, cfg: &Configuration) {
        let mut sum = 0.0;
        for p in 0..self.counts.len() {
            let x = cfg.wrap(self.weights.first + p as i64);
            let c = cfg.box_count(x, self.len).expect("box fits the ring");
            self.counts[p] = c;
            sum += self.weights.values[p] * self.sq(c);
        }
        self.sum = sum;
    }

    fn value(&self) -> f64 {
        self.sum + self.offset
    }

    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize) {
        let ring = cfg.len() as i64;
        let l = self.len as i64;
        let mut d = (b as i64 - a as i64).rem_euclid(ring);
        if d > ring / 2 {
            d -= ring;
        }
        let (a, b) = (a as i64, a as i64 + d);
        let da = if cfg.get(cfg.wrap(a)) == 1 { 1 } else { -1 };
        let db = -da;
        // box x contains site s iff s − L ≤ x ≤ s − 1; overlapping boxes see no net change
        if d.abs() >= l {
            self.bump_range(cfg, a - l, a - 1, da);
            self.bump_range(cfg, b - l, b - 1, db);
        } else if d > 0 {
            self.bump_range(cfg, a - l, b - l - 1, da);
            self.bump_range(cfg, a, b - 1, db);
        } else if d < 0 {
            self.bump_range(cfg, b - l, a - l - 1, db);
            self.bump_range(cfg, b, a - 1, da);
        }
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn recompute(&self, cfg: &Configuration) -> f64 {
        let sum: f64 = (0..self.counts.len())
            .map(|p| {
                let x = cfg.wrap(self.weights.first + p as i64);
                self.weights.values[p] * self.sq(cfg.box_count(x, self.len).expect("box fits the ring"))
            })
            .sum();
        sum + self.offset
    }
}

/// Σ_x w(x) (η(x) − ρ) over ring sites, e.g. the density field paired with a
/// test function, or a Fourier mode of the occupation profile.
#[derive(Debug, Clone)]
pub struct LinearFieldObserver {
    id: String,
    weights: Vec<f64>,
    rho: f64,
    scale: f64,
    sum: f64,
}

impl LinearFieldObserver {
    /// `weights[x]` for every ring site.
    pub fn new(id: impl Into<String>, weights: Vec<f64>, rho: f64, scale: f64) -> Self {
        Self {
            id: id.into(),
            weights,
            rho,
            scale,
            sum: 0.0,
        }
    }

    /// Y^n(u) = n^{−1/2} Σ_x (η(x) − ρ) u(x/n) as an observer.
    pub fn density_field(id: impl Into<String>, u: &TestFunction, params: &ModelParams) -> Result<Self> {
        let w = u.weights(params.n, params.ring_size)?;
        let mut weights = vec![0.0; params.ring_size];
        let norm = (params.n as f64).powf(-0.5);
        for (p, v) in w.values.iter().enumerate() {
            let x = (w.first + p as i64).rem_euclid(params.ring_size as i64) as usize;
            weights[x] += norm * v;
        }
        Ok(Self::new(id, weights, params.rho, 1.0))
    }
}

impl Observer for LinearFieldObserver {
    fn id(&self) -> &str {
        &self.id
    }

    fn reset(&mut self, cfg: &Configuration) {
        self.sum = self.recompute(cfg);
    }

    fn value(&self) -> f64 {
        self.sum
    }

    fn on_exchange(&mut self, cfg: &Configuration, a: usize, b: usize) {
        for s in [a, b] {
            let sign = if cfg.get(s) == 1 { 1.0 } else { -1.0 };
            self.sum += sign * self.weights[s];
        }
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    fn recompute(&self, cfg: &Configuration) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(x, w)| w * (cfg.get(x) as f64 - self.rho))
            .sum()
    }
}

/// Samples u(x/n) at consecutive integer sites `first, first+1, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub first: i64,
    pub values: Vec<f64>,
}

/// Compactly supported smooth profiles standing in for Schwartz test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFunction {
    /// exp(1 − 1/(1 − ((x−c)/w)²)) on |x − c| < w, so u(c) = 1.
    Bump { center: f64, width: f64 },
    /// exp(−(x−c)²/(2σ²)) truncated to |x − c| ≤ cutoff.
    Gaussian { center: f64, sigma: f64, cutoff: f64 },
    /// Smoothed 𝟙[left, right] with transition layers of width `smoothing` inside the interval.
    MollifiedIndicator { left: f64, right: f64, smoothing: f64 },
    Zero,
}

fn smooth_step(t: f64) -> f64 {
    let g = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        g(t) / (g(t) + g(1.0 - t))
    }
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Bump { center, width } => {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - z * z)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::Gaussian { center, sigma, cutoff } => {
                let z = x - center;
                if z.abs() <= cutoff {
                    (-z * z / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::MollifiedIndicator { left, right, smoothing } => {
                smooth_step((x - left) / smoothing) * smooth_step((right - x) / smoothing)
            }
            TestFunction::Zero => 0.0,
        }
    }

    /// Closed interval outside of which u vanishes.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            TestFunction::Bump { center, width } => (center - width, center + width),
            TestFunction::Gaussian { center, cutoff, .. } => (center - cutoff, center + cutoff),
            TestFunction::MollifiedIndicator { left, right, .. } => (left, right),
            TestFunction::Zero => (0.0, 0.0),
        }
    }

    /// max |x| over the support.
    pub fn cutoff(&self) -> f64 {
        let (lo, hi) = self.support();
        lo.abs().max(hi.abs())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFunction::Bump { width, .. } => width > 0.0,
            TestFunction::Gaussian { sigma, cutoff, .. } => sigma > 0.0 && cutoff > 0.0,
            TestFunction::MollifiedIndicator { left, right, smoothing } => {
                smoothing > 0.0 && right - left >= 2.0 * smoothing
            }
            TestFunction::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("test_function", format!("{self:?} has degenerate parameters")))
        }
    }

    /// u(x/n) on the integer sites of the support; requires cutoff·n < N/2.
    pub fn weights(&self, n: u32, ring: usize) -> Result<Weights> {
        self.validate()?;
        let n_f = n as f64;
        if self.cutoff() * n_f >= ring as f64 / 2.0 {
            return Err(Error::SupportOverflow {
                ring,
                reason: format!("cutoff {}·n reaches half the ring", self.cutoff()),
            });
        }
        if matches!(self, TestFunction::Zero) {
            return Ok(Weights {
                first: 0,
                values: Vec::new(),
            });
        }
        let (lo, hi) = self.support();
        let first = (lo * n_f).floor() as i64;
        let last = (hi * n_f).ceil() as i64;
        Ok(Weights {
            first,
            values: (first..=last).map(|x| self.eval(x as f64 / n_f)).collect(),
        })
    }

    /// n⁻¹ Σ_x u(x/n)².
    pub fn discrete_norm_sq(&self, n: u32, ring: usize) -> Result<f64> {
        let w = self.weights(n, ring)?;
        Ok(w.values.iter().map(|v| v * v).sum::<f64>() / n as f64)
    }

    /// ∫ u² by composite Simpson on a fine grid.
    pub fn norm_sq(&self) -> f64 {
        let (lo, hi) = self.support();
        if hi <= lo {
            return 0.0;
        }
        let m = 20_000;
        let h = (hi - lo) / m as f64;
        let mut s = 0.0;
        for i in 0..=m {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * self.eval(lo + i as f64 * h).powi(2);
        }
        s * h / 3.0
    }
}

/// i_ε(x): y ↦ ε⁻¹ 𝟙(0 < (y − x)/ε ≤ 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityApprox {
    pub eps: f64,
    pub base: f64,
}

impl IdentityApprox {
    pub fn new(eps: f64, base: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) && eps != 1.0 {
            return Err(invalid("eps", format!("{eps} is not in (0, 1)")));
        }
        Ok(Self { eps, base })
    }

    pub fn eval(&self, y: f64) -> f64 {
        let z = (y - self.base) / self.eps;
        if z > 0.0 && z <= 1.0 {
            1.0 / self.eps
        } else {
            0.0
        }
    }

    /// ⌊εn⌋, which must be at least 2.
    pub fn box_len(&self, n: u32) -> Result<usize> {
        let len = (self.eps * n as f64 + 1e-9).floor() as usize;
        if len < 2 {
            return Err(invalid("eps", format!("εn = {} is below 2", self.eps * n as f64)));
        }
        Ok(len)
    }
}

/// Y^n(u) = n^{−1/2} Σ_x (η(x) − ρ) u(x/n).
pub fn density_field(cfg: &Configuration, n: u32, rho: f64, u: &TestFunction) -> Result<f64> {
    let w = u.weights(n, cfg.len())?;
    let sum: f64 = w
        .values
        .iter()
        .enumerate()
        .map(|(p, v)| v * (cfg.get(cfg.wrap(w.first + p as i64)) as f64 - rho))
        .sum();
    Ok(sum / (n as f64).sqrt())
}
