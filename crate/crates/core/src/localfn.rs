//! Local functions as multilinear polynomials in the occupation variables,
//! together with their grand-canonical profile φ_f and canonical conditional
//! expectation ψ_f(ℓ).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::lattice::{mobility, Configuration};

/// Most sites a local function may depend on.
pub const MAX_SITES: usize = 20;
/// Box sizes up to this bound are handled in exact rational arithmetic.
pub const EXACT_BOX_LIMIT: usize = 64;

/// f = Σ_A c_A Π_{x∈A} η(x), keyed by sorted site sets. The empty set keys the
/// constant term. Zero coefficients are never stored, so the map is the unique
/// multilinear representation.
#[derive(Clone, PartialEq)]
pub struct LocalFunction {
    terms: BTreeMap<Vec<i32>, f64>,
    sites: Vec<i32>,
    compiled: Vec<(u64, f64)>,
}

impl LocalFunction {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<[i32]>,
    {
        let mut map: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
        for (sites, c) in terms {
            if !c.is_finite() {
                return Err(invalid("coefficient", format!("{c} is not finite")));
            }
            // η(x)² = η(x), so repeated sites collapse
            let key: Vec<i32> = sites.as_ref().iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            *map.entry(key).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        Self::from_map(map)
    }

    fn from_map(terms: BTreeMap<Vec<i32>, f64>) -> Result<Self> {
        let sites: Vec<i32> = terms.keys().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if sites.len() > MAX_SITES {
            return Err(Error::Unsupported(format!(
                "local function depends on {} sites (limit {MAX_SITES})",
                sites.len()
            )));
        }
        if let (Some(&lo), Some(&hi)) = (sites.first(), sites.last()) {
            if (hi as i64 - lo as i64) >= 64 {
                return Err(Error::Unsupported(format!("support [{lo}, {hi}] is wider than 64 sites")));
            }
        }
        let lo = sites.first().copied().unwrap_or(0);
        let compiled = terms
            .iter()
            .map(|(a, &c)| (a.iter().fold(0u64, |m, &x| m | 1 << (x - lo)), c))
            .collect();
        Ok(Self {
            terms,
            sites,
            compiled,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::new([(Vec::<i32>::new(), c)]).expect("constant is always valid")
    }

    /// η(x).
    pub fn occupation(x: i32) -> Self {
        Self::monomial(&[x])
    }

    /// Π_{x∈A} η(x).
    pub fn monomial(sites: &[i32]) -> Self {
        Self::new([(sites, 1.0)]).expect("monomial must have at most MAX_SITES sites")
    }

    /// Π_{x∈A} (η(x) − ρ), expanded.
    pub fn centered_product(sites: &[i32], rho: f64) -> Result<Self> {
        let mut f = Self::constant(1.0);
        for &x in sites {
            f = f.mul(&Self::new([(vec![x], 1.0), (vec![], -rho)])?)?;
        }
        Ok(f)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[i32], f64)> {
        self.terms.iter().map(|(a, &c)| (a.as_slice(), c))
    }

    pub fn constant_term(&self) -> f64 {
        self.terms.get(&Vec::new()).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sites the function depends on, sorted.
    pub fn support(&self) -> &[i32] {
        &self.sites
    }

    pub fn min_site(&self) -> i32 {
        self.sites.first().copied().unwrap_or(0)
    }

    pub fn max_site(&self) -> i32 {
        self.sites.last().copied().unwrap_or(0)
    }

    /// Smallest R with supp(f) ⊆ {−R, …, R}.
    pub fn window_radius(&self) -> usize {
        self.sites.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// ℓ₀: the support fits in {1, …, ℓ₀} after the fixed shift `1 − min_site`.
    pub fn diameter(&self) -> usize {
        if self.sites.is_empty() {
            0
        } else {
            (self.max_site() - self.min_site() + 1) as usize
        }
    }

    /// The translation that moves the support into {1, …, ℓ₀}.
    pub fn shift(&self) -> i32 {
        1 - self.min_site()
    }

    /// Value on a window whose bit `i` is the occupancy of site `i − radius`.
    pub fn evaluate_window(&self, bits: u64, radius: usize) -> Result<f64> {
        let needed = self.window_radius();
        if radius < needed {
            return Err(Error::WindowTooSmall {
                needed: 2 * needed + 1,
                got: 2 * radius + 1,
            });
        }
        let start = radius as i64 + self.min_site() as i64;
        let local = if self.sites.is_empty() { 0 } else { bits >> start };
        Ok(self.evaluate_bits(local))
    }

    /// Value on bits indexed from `min_site` (bit `i` ↔ site `min_site + i`).
    #[inline]
    pub fn evaluate_bits(&self, bits: u64) -> f64 {
        let mut v = 0.0;
        for &(mask, c) in &self.compiled {
            if bits & mask == mask {
                v += c;
            }
        }
        v
    }

    /// τ_x f (η) = f(η(x + ·)) on a ring configuration.
    #[inline]
    pub fn evaluate_at(&self, cfg: &Configuration, x: usize) -> f64 {
        if self.sites.is_empty() {
            return self.constant_term();
        }
        let start = cfg.wrap(x as i64 + self.min_site() as i64);
        self.evaluate_bits(cfg.window_bits(start, self.diameter()))
    }

    /// Straightforward sitewise evaluation, kept independent of the bit tricks.
    pub fn evaluate_naive(&self, cfg: &Configuration, x: usize) -> f64 {
        self.terms
            .iter()
            .map(|(a, &c)| {
                if a.iter().all(|&y| cfg.get_offset(x, y as i64) == 1) {
                    c
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn phi(&self) -> Profile {
        let mut coeffs = vec![0.0; self.degree() + 1];
        for (a, &c) in &self.terms {
            coeffs[a.len()] += c;
        }
        Profile { coeffs }
    }

    fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Coefficients of φ_f as exact rationals (every f64 is a dyadic rational).
    fn exact_profile(&self) -> Vec<BigRational> {
        let mut coeffs = vec![BigRational::zero(); self.degree() + 1];
        for (a, &c) in &self.terms {
            coeffs[a.len()] += BigRational::from_float(c).expect("finite coefficient");
        }
        coeffs
    }

    /// φ_f(β) vanishes identically in β.
    pub fn is_mean_zero_for_all_densities(&self, tol: f64) -> bool {
        self.phi().coeffs.iter().all(|c| c.abs() <= tol)
    }

    /// f − φ_f(ρ).
    pub fn center(&self, rho: f64) -> Self {
        let shift = self.phi().eval(rho);
        self.add(&Self::constant(-shift)).expect("centering adds no sites")
    }

    /// τ_dx f: the function η ↦ f(η(dx + ·)), supported on supp(f) + dx.
    pub fn translate(&self, dx: i32) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(a, &c)| (a.iter().map(|x| x + dx).collect::<Vec<_>>(), c))
            .collect();
        Self::from_map(terms).expect("translation preserves support size")
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.terms.iter().map(|(a, &c)| (a.clone(), s * c))).expect("scaling preserves support")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::new(self.terms.iter().chain(other.terms.iter()).map(|(a, &c)| (a.clone(), c)))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let mut out = Vec::new();
        for (a, &c) in &self.terms {
            for (b, &d) in &other.terms {
                let mut u = a.clone();
                u.extend_from_slice(b);
                out.push((u, c * d));
            }
        }
        Self::new(out)
    }

    /// E_ρ[f].
    pub fn mean(&self, rho: f64) -> f64 {
        self.phi().eval(rho)
    }

    /// Var(f; ν_ρ) from the expansion: E[f²] = Σ_{A,B} c_A c_B ρ^{|A∪B|}.
    pub fn variance(&self, rho: f64) -> f64 {
        let mut second = 0.0;
        for (a, &c) in &self.terms {
            for (b, &d) in &self.terms {
                let union = a.iter().chain(b.iter()).collect::<BTreeSet<_>>().len();
                second += c * d * rho.powi(union as i32);
            }
        }
        let m = self.mean(rho);
        (second - m * m).max(0.0)
    }

    fn check_box(&self, ell: usize) -> Result<()> {
        if ell == 0 || self.diameter() > ell {
            return Err(Error::SupportExceedsBox {
                diameter: self.diameter(),
                box_len: ell,
            });
        }
        Ok(())
    }

    /// ψ_f(ℓ; m) = E[f | m particles on {1, …, ℓ}] with the support shifted into the box.
    pub fn psi(&self, ell: usize, m: usize) -> Result<f64> {
        self.check_box(ell)?;
        if m > ell {
            return Err(Error::CountOutOfRange { m, box_len: ell });
        }
        if ell <= EXACT_BOX_LIMIT {
            return Ok(self.psi_exact(ell, m)?.to_f64().unwrap_or(f64::NAN));
        }
        Ok(psi_float(&self.phi().coeffs, ell, m))
    }

    /// ψ_f(ℓ; m) in exact rational arithmetic.
    pub fn psi_exact(&self, ell: usize, m: usize) -> Result<BigRational> {
        self.check_box(ell)?;
        if m > ell {
            return Err(Error::CountOutOfRange { m, box_len: ell });
        }
        let coeffs = self.exact_profile();
        let mut total = BigRational::zero();
        let mut falling = BigRational::one();
        for (j, c) in coeffs.iter().enumerate() {
            if j > 0 {
                // E[η(1)⋯η(j) | m] = Π_{i<j} (m−i)/(ℓ−i)
                if m < j {
                    break;
                }
                falling *= BigRational::new(BigInt::from(m - (j - 1)), BigInt::from(ell - (j - 1)));
            }
            total += c * &falling;
        }
        Ok(total)
    }

    /// max_m |ψ_f(ℓ;m) − φ_f(m/ℓ) ∓ χ(m/ℓ) φ″_f(m/ℓ)/(2ℓ)|.
    pub fn ensembles_residual(&self, ell: usize, sign: Correction) -> Result<f64> {
        self.check_box(ell)?;
        if ell <= EXACT_BOX_LIMIT {
            return Ok(self.ensembles_residual_exact(ell, sign)?.to_f64().unwrap_or(f64::NAN));
        }
        let profile = self.phi();
        let second = profile.derivative().derivative();
        let mut worst = 0.0f64;
        for m in 0..=ell {
            let x = m as f64 / ell as f64;
            let corr = mobility(x) * second.eval(x) / (2.0 * ell as f64);
            let r = psi_float(&profile.coeffs, ell, m) - profile.eval(x) - sign.factor() * corr;
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }

    /// Exact rational form of [`Self::ensembles_residual`].
    pub fn ensembles_residual_exact(&self, ell: usize, sign: Correction) -> Result<BigRational> {
        self.check_box(ell)?;
        if ell > EXACT_BOX_LIMIT {
            return Err(Error::Unsupported(format!("exact residual needs ℓ ≤ {EXACT_BOX_LIMIT}")));
        }
        let coeffs = self.exact_profile();
        let eval = |c: &[BigRational], x: &BigRational| {
            c.iter().rev().fold(BigRational::zero(), |acc, a| acc * x + a)
        };
        let second: Vec<BigRational> = coeffs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(j, c)| c * BigRational::from_integer(BigInt::from(j * (j - 1))))
            .collect();
        let ell_q = BigRational::from_integer(BigInt::from(ell));
        let two_ell = &ell_q * BigRational::from_integer(BigInt::from(2));
        let mut worst = BigRational::zero();
        for m in 0..=ell {
            let x = BigRational::new(BigInt::from(m), BigInt::from(ell));
            let chi = &x * (BigRational::one() - &x);
            let corr = chi * eval(&second, &x) / &two_ell;
            let corr = match sign {
                Correction::Subtract => corr,
                Correction::Add => -corr,
            };
            let r = (self.psi_exact(ell, m)? - eval(&coeffs, &x) - corr).abs();
            if r > worst {
                worst = r;
            }
        }
        Ok(worst)
    }

    /// Var(ψ_f(ℓ); ν_ρ) with the particle count Binomial(ℓ, ρ).
    pub fn psi_variance(&self, ell: usize, rho: f64) -> Result<f64> {
        self.check_box(ell)?;
        crate::lattice::check_density(rho)?;
        let coeffs = self.phi().coeffs;
        let pmf = binomial_pmf(ell, rho);
        let base = psi_float(&coeffs, ell, 0);
        let values: Vec<f64> = (0..=ell).map(|m| psi_float(&coeffs, ell, m) - base).collect();
        let mean: f64 = pmf.iter().zip(&values).map(|(p, v)| p * v).sum();
        Ok(pmf.iter().zip(&values).map(|(p, v)| p * (v - mean).powi(2)).sum())
    }

    /// The literal form `[[sites], coeff], …`.
    pub fn to_literal(&self) -> String {
        self.terms
            .iter()
            .map(|(a, c)| {
                let sites = a.iter().map(i32::to_string).collect::<Vec<_>>().join(",");
                format!("[[{sites}],{c:?}]")
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

// ψ through the falling-factorial product, in floating point.
fn psi_float(coeffs: &[f64], ell: usize, m: usize) -> f64 {
    let mut total = 0.0;
    let mut falling = 1.0;
    for (j, &c) in coeffs.iter().enumerate() {
        if j > 0 {
            if m < j {
                break;
            }
            falling *= (m - (j - 1)) as f64 / (ell - (j - 1)) as f64;
        }
        total += c * falling;
    }
    total
}

pub(crate) fn binomial_pmf(ell: usize, rho: f64) -> Vec<f64> {
    let (lr, lq) = (rho.ln(), (1.0 - rho).ln());
    let lf = ln_gamma(ell as f64 + 1.0);
    (0..=ell)
        .map(|m| {
            let log = lf - ln_gamma(m as f64 + 1.0) - ln_gamma((ell - m) as f64 + 1.0)
                + m as f64 * lr
                + (ell - m) as f64 * lq;
            log.exp()
        })
        .collect()
}

/// Sign of the second-order term in the equivalence-of-ensembles expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// ψ − φ − χφ″/(2ℓ).
    Subtract,
    /// ψ − φ + χφ″/(2ℓ): the expansion whose residual is O(ℓ⁻²).
    Add,
}

impl Correction {
    fn factor(self) -> f64 {
        match self {
            Correction::Subtract => 1.0,
            Correction::Add => -1.0,
        }
    }
}

/// φ_f as a polynomial in β, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub coeffs: Vec<f64>,
}

impl Profile {
    pub fn eval(&self, beta: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * beta + c)
    }

    pub fn derivative(&self) -> Profile {
        let coeffs = if self.coeffs.len() <= 1 {
            vec![0.0]
        } else {
            self.coeffs.iter().enumerate().skip(1).map(|(j, c)| j as f64 * c).collect()
        };
        Profile { coeffs }
    }

    pub fn d1(&self, beta: f64) -> f64 {
        self.derivative().eval(beta)
    }

    pub fn d2(&self, beta: f64) -> f64 {
        self.derivative().derivative().eval(beta)
    }
}

impl fmt::Debug for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocalFunction({})", self.to_literal())
    }
}

impl fmt::Display for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

impl FromStr for LocalFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let wrapped = if s.starts_with("[[[") || s.is_empty() {
            s.to_string()
        } else {
            format!("[{s}]")
        };
        let wrapped = if wrapped.is_empty() { "[]".to_string() } else { wrapped };
        let terms: Vec<(Vec<i32>, f64)> =
            serde_json::from_str(&wrapped).map_err(|e| invalid("local_function", format!("{s:?}: {e}")))?;
        Self::new(terms)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LiteralRepr {
    Text(String),
    Terms(Vec<(Vec<i32>, f64)>),
}

impl Serialize for LocalFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_literal())
    }
}

impl<'de> Deserialize<'de> for LocalFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LiteralRepr::deserialize(d)? {
            LiteralRepr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            LiteralRepr::Terms(t) => Self::new(t).map_err(serde::de::Error::custom),
        }
    }
}
