//! Exact linear algebra on fixed-particle-number sectors: generators, spectral
//! gaps, Dirichlet forms, H₋₁ norms, and the variational diffusion coefficient.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, EvolveOptions, RateModel, Schedule, SimulationState, SpeedChange, Transition};
use crate::ensemble::run_indexed;
use crate::error::{invalid, Error, Result};
use crate::fields::{GammaObserver, LinearFieldObserver, Observer};
use crate::lattice::{Configuration, ModelParams, RandomSource};
use crate::localfn::LocalFunction;
use crate::stats::{linear_fit, MeanEstimate, ScalingFit};

pub const MAX_SECTOR_STATES: usize = 3_000_000;
/// Sectors below this size are diagonalized densely.
pub const DENSE_LIMIT: usize = 4000;
/// The Kipnis-Varadhan constant.
pub const KV_CONSTANT: f64 = 18.0;
const MEAN_ZERO_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Sites `1..=ℓ` with bonds `(x, x+1)`, `x < ℓ`.
    Interval(usize),
    /// Sites `0..N` with periodic bonds.
    Ring(usize),
}

impl Geometry {
    pub fn size(&self) -> usize {
        match *self {
            Geometry::Interval(l) | Geometry::Ring(l) => l,
        }
    }

    /// Bonds as bit pairs.
    fn bonds(&self) -> Vec<(usize, usize)> {
        match *self {
            Geometry::Interval(l) => (0..l.saturating_sub(1)).map(|b| (b, b + 1)).collect(),
            Geometry::Ring(n) => (0..n).map(|b| (b, (b + 1) % n)).collect(),
        }
    }
}

/// All configurations of a geometry with exactly `k` particles, as bit masks
/// in increasing order (bit `i` is site `i+1` on an interval, site `i` on a ring).
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSector {
    geometry: Geometry,
    k: usize,
    states: Vec<u64>,
}

impl FiniteSector {
    pub fn new(geometry: Geometry, k: usize) -> Result<Self> {
        let size = geometry.size();
        if size == 0 || size > 63 {
            return Err(invalid("size", format!("{size} sites outside 1..=63")));
        }
        if k > size {
            return Err(Error::CountOutOfRange { m: k, box_len: size });
        }
        let count = binomial(size, k);
        if count > MAX_SECTOR_STATES as u128 {
            return Err(Error::SectorTooLarge {
                states: count,
                limit: MAX_SECTOR_STATES,
            });
        }
        let mut states = Vec::with_capacity(count as usize);
        if k == 0 {
            states.push(0);
        } else {
            // Gosper's hack walks the k-subsets in increasing order
            let mut v: u64 = (1u64 << k) - 1;
            let limit = 1u64 << size;
            while v < limit {
                states.push(v);
                let c = v & v.wrapping_neg();
                let r = v + c;
                v = (((r ^ v) >> 2) / c) | r;
            }
        }
        Ok(Self { geometry, k, states })
    }

    pub fn interval(ell: usize, k: usize) -> Result<Self> {
        Self::new(Geometry::Interval(ell), k)
    }

    pub fn ring(n: usize, k: usize) -> Result<Self> {
        Self::new(Geometry::Ring(n), k)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn particles(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.states.binary_search(&mask).ok()
    }

    pub fn configuration(&self, i: usize) -> Configuration {
        Configuration::from_mask(self.geometry.size(), self.states[i])
    }

    /// Tabulate `f` over the sector.
    pub fn tabulate(&self, f: impl Fn(u64) -> f64) -> Vec<f64> {
        self.states.iter().map(|&m| f(m)).collect()
    }

    /// Values of a local function. On an interval its support must lie in
    /// `1..=ℓ`; on a ring sites are taken mod N.
    pub fn local_function(&self, f: &LocalFunction) -> Result<Vec<f64>> {
        match self.geometry {
            Geometry::Interval(l) => {
                if !f.is_zero() && (f.min_site() < 1 || f.max_site() > l as i32) {
                    return Err(Error::SupportExceedsBox {
                        diameter: f.diameter(),
                        box_len: l,
                    });
                }
                Ok(self.tabulate(|m| interval_value(f, m)))
            }
            Geometry::Ring(_) => Ok((0..self.len()).map(|i| f.evaluate_at(&self.configuration(i), 0)).collect()),
        }
    }

    /// Expectation under the uniform (canonical) measure.
    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / f.len() as f64
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / f.len() as f64
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / f.len() as f64
    }
}

// bit i of `mask` is site i+1
fn interval_value(f: &LocalFunction, mask: u64) -> f64 {
    if f.is_zero() {
        return f.constant_term();
    }
    f.evaluate_bits(mask >> (f.min_site() - 1))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[derive(Debug, Clone, PartialEq)]
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut ptr = Vec::with_capacity(rows.len() + 1);
        let (mut col, mut val) = (Vec::new(), Vec::new());
        ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *val.last_mut().expect("previous entry exists") += v;
                } else {
                    col.push(j);
                    val.push(v);
                    last = Some(j);
                }
            }
            ptr.push(col.len());
        }
        Self { ptr, col, val }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[i]..self.ptr[i + 1]).map(move |e| (self.col[e], self.val[e]))
    }
}

/// Generator of a rate model on a sector: off-diagonal rates plus exit rates,
/// with the symmetric part `S = (L + Lᵀ)/2` cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    sector: FiniteSector,
    off: Csr,
    sym: Csr,
    exit: Vec<f64>,
}

/// Build the generator of `model` on `sector`. On an interval only bonds and
/// jumps inside `1..=ℓ` are kept, and sites outside the interval read as empty
/// in speed-change rates.
pub fn build_sector_generator(model: &RateModel, sector: &FiniteSector) -> Result<GeneratorMatrix> {
    let size = sector.geometry.size();
    let moves: Vec<(usize, usize, MoveRate)> = match (model, sector.geometry) {
        (RateModel::SpeedChange(sc), geometry) => {
            if let Geometry::Ring(n) = geometry {
                if n < model.min_ring() {
                    return Err(Error::SupportOverflow {
                        ring: n,
                        reason: format!("rate window needs a ring of {} sites", model.min_ring()),
                    });
                }
            }
            geometry
                .bonds()
                .into_iter()
                .map(|(a, b)| (a, b, MoveRate::Bond(sc.clone())))
                .collect()
        }
        (_, geometry) => {
            let kernel = model.kernel().expect("exclusion model has a kernel");
            if let Geometry::Interval(_) = geometry {
                if kernel.jumps().iter().any(|&(z, p)| (kernel.rate(-z) - p).abs() > 0.0) {
                    return Err(Error::Unsupported(
                        "asymmetric kernels leave the uniform measure non-invariant on an interval".into(),
                    ));
                }
            }
            let mut moves = Vec::new();
            for &(d, forward, backward) in kernel.pairs() {
                for x in 0..size {
                    let y = match geometry {
                        Geometry::Interval(_) if x + d < size => x + d,
                        Geometry::Interval(_) => continue,
                        Geometry::Ring(n) => {
                            if n < model.min_ring() {
                                return Err(Error::SupportOverflow {
                                    ring: n,
                                    reason: format!("kernel range needs a ring of {} sites", model.min_ring()),
                                });
                            }
                            (x + d) % n
                        }
                    };
                    moves.push((x, y, MoveRate::Pair(forward, backward)));
                }
            }
            moves
        }
    };
    let pad = model.interaction_range();
    let n = sector.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut exit = vec![0.0; n];
    for (i, &mask) in sector.states.iter().enumerate() {
        let padded = match sector.geometry {
            Geometry::Interval(_) => Some(Configuration::from_mask(size + 2 * pad, mask << pad)),
            Geometry::Ring(_) => None,
        };
        let is_padded = padded.is_some();
        let cfg = padded.unwrap_or_else(|| Configuration::from_mask(size, mask));
        for (a, b, rate) in &moves {
            let (ba, bb) = ((mask >> a) & 1, (mask >> b) & 1);
            if ba == bb {
                continue;
            }
            let r = match rate {
                MoveRate::Bond(sc) => {
                    let bond = if is_padded { a + pad } else { *a };
                    RateModel::SpeedChange(sc.clone()).transition_rate(&cfg, Transition::Swap { bond })
                }
                MoveRate::Pair(forward, backward) => {
                    if ba == 1 {
                        *forward
                    } else {
                        *backward
                    }
                }
            };
            if r == 0.0 {
                continue;
            }
            let target = mask ^ (1 << a) ^ (1 << b);
            let j = sector.index_of(target).expect("exchange preserves the particle count");
            rows[i].push((j, r));
            cols[j].push((i, r));
            exit[i] += r;
        }
    }
    let sym_rows: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .zip(cols)
        .map(|(r, c)| r.iter().chain(c.iter()).map(|&(j, v)| (j, 0.5 * v)).collect())
        .collect();
    Ok(GeneratorMatrix {
        sector: sector.clone(),
        off: Csr::from_rows(rows),
        sym: Csr::from_rows(sym_rows),
        exit,
    })
}

#[derive(Debug, Clone)]
enum MoveRate {
    Bond(SpeedChange),
    Pair(f64, f64),
}

impl GeneratorMatrix {
    pub fn sector(&self) -> &FiniteSector {
        &self.sector
    }

    pub fn len(&self) -> usize {
        self.exit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exit.is_empty()
    }

    /// Dense `L`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -self.exit[i];
            for (j, v) in self.off.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Dense `S = (L + Lᵀ)/2`.
    pub fn symmetric_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -self.exit[i];
            for (j, v) in self.sym.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `Lf`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.off.row(i).map(|(j, v)| v * (f[j] - f[i])).sum())
            .collect()
    }

    /// `(−S)x`.
    fn apply_neg_sym(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let s: f64 = self.sym.row(i).map(|(j, v)| v * x[j]).sum();
            out[i] = self.exit[i] * x[i] - s;
        }
    }

    /// Whether the chain on the sector is irreducible.
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for (j, _) in self.sym.row(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }
}

/// Smallest nonzero eigenvalue of `−S`.
pub fn spectral_gap(g: &GeneratorMatrix) -> Result<f64> {
    if g.len() < 2 || !g.is_connected() {
        return Err(Error::DisconnectedSector);
    }
    if g.len() < DENSE_LIMIT {
        let mut eig: Vec<f64> = (-g.symmetric_dense()).symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        return Ok(eig[1]);
    }
    inverse_iteration(g)
}

// Inverse iteration on the mean-zero subspace, each solve by conjugate gradients.
fn inverse_iteration(g: &GeneratorMatrix) -> Result<f64> {
    let n = g.len();
    let mut rng = RandomSource::new(0x5eed, 0).rng();
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project_mean_zero(&mut x);
    normalize(&mut x);
    let mut ax = vec![0.0; n];
    let mut lambda = f64::INFINITY;
    for _ in 0..500 {
        let mut y = conjugate_gradient(g, &x)?;
        project_mean_zero(&mut y);
        normalize(&mut y);
        g.apply_neg_sym(&y, &mut ax);
        let next = dot(&y, &ax);
        x = y;
        if (lambda - next).abs() <= 1e-13 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) {
    let n = dot(x, x).sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}

fn project_mean_zero(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

// Solve (−S)u = b for mean-zero b, returning the mean-zero solution.
fn conjugate_gradient(g: &GeneratorMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = g.len();
    let mut r = b.to_vec();
    project_mean_zero(&mut r);
    let bnorm = dot(&r, &r).sqrt();
    let mut u = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(u);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..(10 * n).max(100) {
        g.apply_neg_sym(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project_mean_zero(&mut r);
        let next = dot(&r, &r);
        if next.sqrt() <= 1e-14 * bnorm {
            project_mean_zero(&mut u);
            return Ok(u);
        }
        let beta = next / rr;
        rr = next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Unsupported("conjugate gradients did not converge".into()))
}

/// `⟨f, −Lf⟩` under the uniform sector measure.
pub fn dirichlet_form(g: &GeneratorMatrix, f: &[f64]) -> f64 {
    let mut out = vec![0.0; g.len()];
    g.apply_neg_sym(f, &mut out);
    (dot(f, &out) / g.len() as f64).max(0.0)
}

/// `E(f) = Σ_bonds ∫ (f(η^{x,x+1}) − f(η))²` under the uniform sector measure.
pub fn energy_form(sector: &FiniteSector, f: &[f64]) -> f64 {
    let bonds = sector.geometry.bonds();
    let total: f64 = sector
        .states
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            bonds
                .iter()
                .filter(|&&(a, b)| (m >> a) & 1 != (m >> b) & 1)
                .map(|&(a, b)| {
                    let j = sector.index_of(m ^ (1 << a) ^ (1 << b)).expect("swap stays in sector");
                    (f[j] - f[i]).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    total / sector.len() as f64
}

/// `E(f)` for a local function on `1..=ℓ` under the product measure `ν_ρ`.
pub fn energy_form_product(f: &LocalFunction, ell: usize, rho: f64) -> Result<f64> {
    if ell == 0 || ell > 20 {
        return Err(invalid("ell", format!("{ell} outside 1..=20")));
    }
    if !f.is_zero() && (f.min_site() < 1 || f.max_site() > ell as i32) {
        return Err(Error::SupportExceedsBox {
            diameter: f.diameter(),
            box_len: ell,
        });
    }
    let value = |m: u64| interval_value(f, m);
    let mut total = 0.0;
    for m in 0..(1u64 << ell) {
        let ones = m.count_ones() as i32;
        let w = rho.powi(ones) * (1.0 - rho).powi(ell as i32 - ones);
        for b in 0..ell - 1 {
            if (m >> b) & 1 != (m >> (b + 1)) & 1 {
                total += w * (value(m ^ (0b11 << b)) - value(m)).powi(2);
            }
        }
    }
    Ok(total)
}

fn check_mean_zero(f: &[f64]) -> Result<()> {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let scale = f.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if mean.abs() > MEAN_ZERO_TOL * scale {
        return Err(Error::NotMeanZero { mean });
    }
    Ok(())
}

/// Mean-zero solution of `(−S)u = f`.
pub fn poisson_solve(g: &GeneratorMatrix, f: &[f64]) -> Result<Vec<f64>> {
    check_mean_zero(f)?;
    if !g.is_connected() {
        return Err(Error::DisconnectedSector);
    }
    if g.len() < DENSE_LIMIT.min(600) {
        // small sectors: pseudo-inverse through the dense eigenbasis
        let eig = (-g.symmetric_dense()).symmetric_eigen();
        let fv = DVector::from_column_slice(f);
        let mut u = DVector::zeros(g.len());
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-10 {
                let v = eig.eigenvectors.column(k);
                u += v * (v.dot(&fv) / lam);
            }
        }
        return Ok(u.iter().copied().collect());
    }
    conjugate_gradient(g, f)
}

/// `‖f‖₋₁² = sup_g {2⟨f,g⟩ − ⟨g,−Sg⟩} = ⟨f, (−S)⁻¹f⟩`.
pub fn h_minus_one(g: &GeneratorMatrix, f: &[f64]) -> Result<f64> {
    if f.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let u = poisson_solve(g, f)?;
    Ok(g.sector.inner(f, &u).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvPoint {
    pub t: f64,
    pub lhs: MeanEstimate,
    pub bound: f64,
    pub lhs_over_t: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvReport {
    pub h_minus_one_sq: f64,
    pub points: Vec<KvPoint>,
    /// `(LHS/t) / (2‖f‖₋₁²)` at the last time, which stays below 1 for reversible dynamics.
    pub long_run_ratio: f64,
    pub pass: bool,
}

/// Monte Carlo check of `E[(∫_0^t f(η_s)ds)²] ≤ 18 t ‖f‖₋₁²` with the chain
/// started from the uniform sector measure.
pub fn kv_check(
    g: &GeneratorMatrix,
    f: &[f64],
    times: &[f64],
    trajectories: usize,
    src: &RandomSource,
    workers: Option<usize>,
) -> Result<KvReport> {
    let h = h_minus_one(g, f)?;
    let integrals = run_indexed(trajectories, workers, |i| Ok(sector_path_integrals(g, f, times, &src.stream(i as u64))))?;
    let mut points = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let lhs = MeanEstimate::second_moment(&integrals.iter().map(|p| p[k]).collect::<Vec<_>>())?;
        let bound = KV_CONSTANT * t * h;
        points.push(KvPoint {
            t,
            lhs,
            bound,
            lhs_over_t: lhs.mean / t,
            pass: lhs.ci_hi <= bound,
        });
    }
    let long_run_ratio = points.last().map_or(0.0, |p| if h > 0.0 { p.lhs_over_t / (2.0 * h) } else { 0.0 });
    Ok(KvReport {
        h_minus_one_sq: h,
        pass: points.iter().all(|p| p.pass),
        points,
        long_run_ratio,
    })
}

// Exact time integrals of f along one path of the sector chain.
fn sector_path_integrals(g: &GeneratorMatrix, f: &[f64], times: &[f64], src: &RandomSource) -> Vec<f64> {
    let mut rng = src.rng();
    let mut state = rng.random_range(0..g.len());
    let mut now = 0.0;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let next_jump = |state: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let exit = g.exit[state];
        if exit == 0.0 {
            f64::INFINITY
        } else {
            -(1.0 - rng.random::<f64>()).ln() / exit
        }
    };
    let mut jump_at = next_jump(state, &mut rng);
    for &t in times {
        while jump_at <= t {
            acc += f[state] * (jump_at - now);
            now = jump_at;
            let mut target = rng.random::<f64>() * g.exit[state];
            let mut chosen = None;
            for (j, v) in g.off.row(state) {
                chosen = Some(j);
                if target < v {
                    break;
                }
                target -= v;
            }
            state = chosen.expect("positive exit rate has a move");
            jump_at = now + next_jump(state, &mut rng);
        }
        acc += f[state] * (t - now);
        now = t;
        out.push(acc);
    }
    out
}

/// `max_{ℓ,k} 1/(ℓ²·gap)` over SSEP intervals `ℓ ∈ 2..=max_ell`: the smallest
/// constant with `Var(f) ≤ κ₀ℓ²⟨f, −L_ℓ f⟩` on every tested sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kappa0 {
    pub value: f64,
    /// `(ℓ, k, gap)` for every sector used.
    pub sectors: Vec<(usize, usize, f64)>,
}

pub fn calibrate_kappa0(max_ell: usize) -> Result<Kappa0> {
    let ssep = RateModel::SpeedChange(SpeedChange::new(0, vec![1.0; 4], None)?);
    let mut sectors = Vec::new();
    for ell in 2..=max_ell {
        for k in 1..ell {
            let g = build_sector_generator(&ssep, &FiniteSector::interval(ell, k)?)?;
            sectors.push((ell, k, spectral_gap(&g)?));
        }
    }
    let value = sectors
        .iter()
        .map(|&(l, _, gap)| 1.0 / ((l * l) as f64 * gap))
        .fold(0.0, f64::max);
    Ok(Kappa0 { value, sectors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub lhs: MeanEstimate,
    pub sum_of_squares: f64,
    /// `|E[(ΣX_i)²] − ΣE[X_i²]| / ΣE[X_i²]`.
    pub additivity: f64,
    pub bound: f64,
    pub kappa0: f64,
    pub epsilon0: f64,
    pub pass: bool,
}

/// Monte Carlo check of the summed bound `18κ₀ t/ε₀ Σ ℓ_i² Var(f_i; ν_ρ)` for
/// local functions with disjoint supports, each mean-zero under every product
/// measure. Trajectories start from `ν_ρ` on a ring of `ring` sites.
#[allow(clippy::too_many_arguments)]
pub fn block_orthogonality_check(
    model: &Arc<RateModel>,
    ring: usize,
    rho: f64,
    blocks: &[LocalFunction],
    t: f64,
    kappa0: f64,
    trajectories: usize,
    src: &RandomSource,
    workers: Option<usize>,
) -> Result<BlockReport> {
    let epsilon0 = match model.as_ref() {
        RateModel::SpeedChange(sc) => sc.epsilon0(),
        _ => return Err(Error::Unsupported("block bound is stated for speed-change dynamics".into())),
    };
    for f in blocks {
        if !f.is_mean_zero_for_all_densities(1e-12) {
            let mean = f.phi().coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            return Err(Error::NotMeanZero { mean });
        }
    }
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            let (a, b) = (&blocks[i], &blocks[j]);
            if a.is_zero() || b.is_zero() {
                continue;
            }
            if a.min_site() <= b.max_site() && b.min_site() <= a.max_site() {
                return Err(Error::OverlappingSupports { first: i, second: j });
            }
        }
    }
    let params = ModelParams {
        rho,
        n: 1,
        ring_size: ring,
        horizon: t,
        ring_factor: crate::lattice::DEFAULT_RING_FACTOR,
    };
    params.validate()?;
    let schedule = Schedule::new(vec![t], 1.0)?;
    let records = crate::ensemble::run_trajectories(model, &params, &schedule, trajectories, src, workers, || {
        blocks
            .iter()
            .enumerate()
            .map(|(i, f)| -> Result<Box<dyn Observer>> {
                Ok(Box::new(GammaObserver::new(format!("block{i}"), f.clone(), &params)?.with_scale(1.0)))
            })
            .collect()
    })?;
    let per_block: Vec<Vec<f64>> = records.iter().map(|r| r.integrals.iter().map(|s| s[0]).collect()).collect();
    let sums: Vec<f64> = per_block.iter().map(|b| b.iter().sum()).collect();
    let lhs = MeanEstimate::second_moment(&sums)?;
    let sum_of_squares: f64 = (0..blocks.len())
        .map(|i| per_block.iter().map(|b| b[i] * b[i]).sum::<f64>() / per_block.len() as f64)
        .sum();
    let bound = KV_CONSTANT * kappa0 * t / epsilon0
        * blocks
            .iter()
            .map(|f| (f.diameter() as f64).powi(2) * f.variance(rho))
            .sum::<f64>();
    Ok(BlockReport {
        additivity: (lhs.mean - sum_of_squares).abs() / sum_of_squares,
        pass: lhs.ci_hi <= bound,
        lhs,
        sum_of_squares,
        bound,
        kappa0,
        epsilon0,
    })
}

// Multilinear polynomial in the occupations: monomial mask (bit s + OFFSET is site s) → coefficient.
type Poly = BTreeMap<u64, f64>;
const OFFSET: i32 = 32;

fn site_bit(s: i32) -> u64 {
    1u64 << (s + OFFSET)
}

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (&ma, &ca) in a {
        for (&mb, &cb) in b {
            *out.entry(ma | mb).or_insert(0.0) += ca * cb;
        }
    }
    out
}

fn poly_mean(p: &Poly, powers: &[f64]) -> f64 {
    p.iter().map(|(&m, &c)| c * powers[m.count_ones() as usize]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalD {
    pub value: f64,
    /// Minimum over the basis of radius `0, 1, …, k`.
    pub by_radius: Vec<f64>,
    pub ill_conditioned: bool,
}

/// `D(ρ) = χ⁻¹ inf_f E_ρ[r (η(1) − η(0) − ∇_{0,1} Σ_x τ_x f)²]` with `f` in the
/// span of monomials supported in `{−k, …, k}`.
///
/// Writing `∇_{0,1} Σ_x τ_x f = (η(1) − η(0)) P` with `P` free of sites 0
/// and 1, the objective is `2 E[r (1 − P)²]`, an exact quadratic form in the
/// coefficients of `f`.
pub fn variational_d(model: &SpeedChange, rho: f64, k: usize) -> Result<VariationalD> {
    crate::lattice::check_density(rho)?;
    if rho == 0.0 || rho == 1.0 {
        return Err(invalid("rho", "the mobility vanishes at the endpoints"));
    }
    if k > 5 {
        return Err(invalid("k", format!("window radius {k} exceeds 5")));
    }
    let powers: Vec<f64> = (0..=64).map(|j| rho.powi(j)).collect();
    let rate = rate_polynomial(model);
    let mean_rate = poly_mean(&rate, &powers);
    // translation classes A ⊆ {0, …, 2k} with 0 ∈ A and |A| ≥ 2
    let mut basis: Vec<(usize, Poly)> = Vec::new();
    for a in 0u64..(1u64 << (2 * k)) {
        let set = (a << 1) | 1;
        if set.count_ones() < 2 {
            continue;
        }
        let diameter = 63 - set.leading_zeros() as usize;
        basis.push((diameter.div_ceil(2), gradient_polynomial(set)));
    }
    basis.sort_by_key(|b| b.0);
    let weighted: Vec<Poly> = basis.iter().map(|(_, p)| poly_mul(&rate, p)).collect();
    let m = basis.len();
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..m {
        rhs[i] = poly_mean(&weighted[i], &powers);
        for j in i..m {
            let v = poly_mean(&poly_mul(&weighted[i], &basis[j].1), &powers);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let mut by_radius = Vec::with_capacity(k + 1);
    let mut ill_conditioned = false;
    for radius in 0..=k {
        let size = basis.iter().take_while(|b| b.0 <= radius).count();
        if size == 0 {
            by_radius.push(2.0 * mean_rate);
            continue;
        }
        let g = gram.view((0, 0), (size, size)).into_owned();
        let b = rhs.rows(0, size).into_owned();
        let eig = g.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        if eig.eigenvalues.iter().any(|&e| e < RIDGE * top.max(1.0)) {
            ill_conditioned = true;
        }
        let mut explained = 0.0;
        for (c, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > RIDGE * top.max(1.0) {
                let proj = eig.eigenvectors.column(c).dot(&b);
                explained += proj * proj / (lam + RIDGE);
            }
        }
        by_radius.push(2.0 * (mean_rate - explained));
    }
    Ok(VariationalD {
        value: *by_radius.last().expect("radius 0 is always present"),
        by_radius,
        ill_conditioned,
    })
}

// r as a multilinear polynomial in the window sites other than 0 and 1.
fn rate_polynomial(model: &SpeedChange) -> Poly {
    let radius = model.radius();
    let others: Vec<i32> = (-(radius as i32)..=radius as i32 + 1).filter(|&s| s != 0 && s != 1).collect();
    let size = others.len();
    // values on subsets of `others`, then Möbius inversion to coefficients
    let mut coef: Vec<f64> = (0..1usize << size)
        .map(|subset| {
            let mut window = 0u64;
            for (i, &s) in others.iter().enumerate() {
                if subset >> i & 1 == 1 {
                    window |= 1 << (s + radius as i32);
                }
            }
            model.rate(window)
        })
        .collect();
    for i in 0..size {
        for subset in 0..1usize << size {
            if subset >> i & 1 == 1 {
                coef[subset] -= coef[subset ^ (1 << i)];
            }
        }
    }
    let mut poly = Poly::new();
    for (subset, &c) in coef.iter().enumerate() {
        if c != 0.0 {
            let mask = others
                .iter()
                .enumerate()
                .filter(|(i, _)| subset >> i & 1 == 1)
                .fold(0u64, |m, (_, &s)| m | site_bit(s));
            poly.insert(mask, c);
        }
    }
    poly
}

// P_A with ∇_{0,1} Σ_x τ_x η^A = (η(1) − η(0)) P_A; `set` has bit a for a ∈ A.
fn gradient_polynomial(set: u64) -> Poly {
    let sites: Vec<i32> = (0..64).filter(|&a| set >> a & 1 == 1).collect();
    let mut poly = Poly::new();
    let mut shifts: Vec<i32> = sites.iter().flat_map(|&a| [-a, 1 - a]).collect();
    shifts.sort_unstable();
    shifts.dedup();
    for x in shifts {
        let moved: Vec<i32> = sites.iter().map(|a| a + x).collect();
        let (has0, has1) = (moved.contains(&0), moved.contains(&1));
        let (drop, sign) = match (has0, has1) {
            (true, false) => (0, 1.0),
            (false, true) => (1, -1.0),
            _ => continue,
        };
        let mask = moved.iter().filter(|&&s| s != drop).fold(0u64, |m, &s| m | site_bit(s));
        *poly.entry(mask).or_insert(0.0) += sign;
    }
    poly.retain(|_, c| *c != 0.0);
    poly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicD {
    pub value: f64,
    /// Decay rate of the ensemble-mean Fourier mode.
    pub decay_rate: f64,
    pub fit: ScalingFit,
    /// Ensemble mean of the mode at each time.
    pub mode_means: Vec<f64>,
}

/// Bulk diffusion coefficient from the relaxation of a sinusoidal density
/// profile `ρ + A sin(2πx/N)` on a ring: the mean of `Σ_x η(x) sin(2πx/N)`
/// decays as `exp(−2D(1 − cos(2π/N)) t)`.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_diffusion(
    model: &Arc<RateModel>,
    ring: usize,
    rho: f64,
    amplitude: f64,
    times: &[f64],
    trajectories: usize,
    src: &RandomSource,
    workers: Option<usize>,
) -> Result<DynamicD> {
    if !(amplitude > 0.0 && rho - amplitude >= 0.0 && rho + amplitude <= 1.0) {
        return Err(invalid("amplitude", "profile must stay inside [0, 1]"));
    }
    let k = 2.0 * std::f64::consts::PI / ring as f64;
    let weights: Vec<f64> = (0..ring).map(|x| (k * x as f64).sin()).collect();
    let schedule = Schedule::new(times.to_vec(), 1.0)?;
    let modes = run_indexed(trajectories, workers, |i| {
        let mut rng = src.stream(2 * i as u64).rng();
        let sites: Vec<u8> = weights
            .iter()
            .map(|w| (rng.random::<f64>() < rho + amplitude * w) as u8)
            .collect();
        let cfg = Configuration::from_sites(&sites)?;
        let mut state = SimulationState::new(Arc::clone(model), cfg, &src.stream(2 * i as u64 + 1))?;
        let mut obs: Vec<Box<dyn Observer>> = vec![Box::new(LinearFieldObserver::new("mode", weights.clone(), rho, 1.0))];
        let rec = evolve(&mut state, &schedule, &mut obs, EvolveOptions::default())?;
        Ok(rec.snapshots[0].clone())
    })?;
    let mode_means: Vec<f64> = (0..times.len())
        .map(|j| modes.iter().map(|m| m[j]).sum::<f64>() / modes.len() as f64)
        .collect();
    if let Some((j, &m)) = mode_means.iter().enumerate().find(|(_, &m)| m <= 0.0) {
        return Err(Error::NonPositive { x: times[j], y: m });
    }
    let points: Vec<(f64, f64)> = times.iter().zip(&mode_means).map(|(&t, &m)| (t, m.ln())).collect();
    let fit = linear_fit(&points);
    let decay_rate = -fit.slope;
    Ok(DynamicD {
        value: decay_rate / (2.0 * (1.0 - k.cos())),
        decay_rate,
        fit,
        mode_means,
    })
}
