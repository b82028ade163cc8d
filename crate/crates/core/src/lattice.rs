//! Periodic ring configurations, product-measure sampling and reproducible
//! random streams.
//!
//! A [`Configuration`] is the finite-volume stand-in for a point of
//! `{0,1}^Z`: `N` sites on a ring, stored as packed 64-bit words.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Occupancies of a ring of `N` sites.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    len: usize,
    particle_count: usize,
}

impl Configuration {
    /// The empty ring of `len` sites.
    pub fn empty(len: usize) -> Self {
        assert!(len > 0, "ring must have at least one site");
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
            particle_count: 0,
        }
    }

    pub fn from_sites(sites: &[u8]) -> Result<Self> {
        if sites.is_empty() {
            return Err(invalid("sites", "ring must have at least one site"));
        }
        let mut cfg = Self::empty(sites.len());
        for (x, &s) in sites.iter().enumerate() {
            match s {
                0 => {}
                1 => cfg.set(x, true),
                other => return Err(invalid("sites", format!("occupancy {other} at site {x}"))),
            }
        }
        Ok(cfg)
    }

    /// Independent Bernoulli(`rho`) occupancies on `len` sites.
    pub fn sample_bernoulli<R: Rng + ?Sized>(len: usize, rho: f64, rng: &mut R) -> Result<Self> {
        check_density(rho)?;
        let mut cfg = Self::empty(len);
        for x in 0..len {
            if rng.random::<f64>() < rho {
                cfg.set(x, true);
            }
        }
        Ok(cfg)
    }

    /// Uniform configuration with exactly `k` particles (the canonical measure).
    pub fn sample_canonical<R: Rng + ?Sized>(len: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k > len {
            return Err(invalid("k", format!("{k} particles on {len} sites")));
        }
        let mut cfg = Self::empty(len);
        for x in index::sample(rng, len, k) {
            cfg.set(x, true);
        }
        Ok(cfg)
    }

    /// Build from the low `len` bits of `mask` (bit `i` is site `i`).
    pub fn from_mask(len: usize, mask: u64) -> Self {
        assert!(len <= 64);
        let mut cfg = Self::empty(len);
        for x in 0..len {
            if (mask >> x) & 1 == 1 {
                cfg.set(x, true);
            }
        }
        cfg
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.particle_count == 0
    }

    #[inline]
    pub fn particle_count(&self) -> usize {
        self.particle_count
    }

    pub fn density(&self) -> f64 {
        self.particle_count as f64 / self.len as f64
    }

    /// Occupancy of site `x` (taken mod N).
    #[inline]
    pub fn get(&self, x: usize) -> u8 {
        let x = if x >= self.len { x % self.len } else { x };
        ((self.words[x >> 6] >> (x & 63)) & 1) as u8
    }

    /// Occupancy at a signed offset from `origin`, wrapping around the ring.
    #[inline]
    pub fn get_offset(&self, origin: usize, offset: i64) -> u8 {
        self.get(self.wrap(origin as i64 + offset))
    }

    #[inline]
    pub fn wrap(&self, x: i64) -> usize {
        let n = self.len as i64;
        if (0..n).contains(&x) {
            x as usize
        } else if (-n..0).contains(&x) {
            (x + n) as usize
        } else {
            x.rem_euclid(n) as usize
        }
    }

    fn set(&mut self, x: usize, occupied: bool) {
        let (w, b) = (x >> 6, x & 63);
        let was = (self.words[w] >> b) & 1 == 1;
        if was != occupied {
            self.words[w] ^= 1 << b;
            if occupied {
                self.particle_count += 1;
            } else {
                self.particle_count -= 1;
            }
        }
    }

    /// Exchange the occupancies of sites `x` and `y` (η ↦ η^{x,y}).
    /// Returns whether the configuration changed.
    #[inline]
    pub fn exchange(&mut self, x: usize, y: usize) -> bool {
        let x = if x >= self.len { x % self.len } else { x };
        let y = if y >= self.len { y % self.len } else { y };
        if self.get(x) == self.get(y) {
            return false;
        }
        self.words[x >> 6] ^= 1 << (x & 63);
        self.words[y >> 6] ^= 1 << (y & 63);
        true
    }

    /// Nearest-neighbour swap across the bond `(x, x+1 mod N)`.
    #[inline]
    pub fn swap(&mut self, x: usize) -> bool {
        let y = if x + 1 >= self.len { (x + 1) % self.len } else { x + 1 };
        self.exchange(x, y)
    }

    pub fn swapped(&self, x: usize) -> Self {
        let mut out = self.clone();
        out.swap(x);
        out
    }

    /// `len` consecutive occupancies starting at `start`, bit `i` ↔ site `start + i`.
    #[inline]
    pub fn window_bits(&self, start: usize, len: usize) -> u64 {
        debug_assert!(len <= 64);
        let start = start % self.len;
        if start + len <= self.len {
            let (w, b) = (start >> 6, start & 63);
            let mut bits = self.words[w] >> b;
            if b + len > 64 {
                bits |= self.words[w + 1] << (64 - b);
            }
            if len < 64 {
                bits &= (1u64 << len) - 1;
            }
            bits
        } else {
            let mut bits = 0u64;
            for i in 0..len {
                bits |= (self.get(start + i) as u64) << i;
            }
            bits
        }
    }

    /// Number of particles on sites `x+1, …, x+ℓ` (mod N).
    pub fn box_count(&self, x: usize, ell: usize) -> Result<usize> {
        if ell == 0 || ell > self.len {
            return Err(invalid("ell", format!("box of {ell} sites on a ring of {}", self.len)));
        }
        let start = (x % self.len + 1) % self.len;
        let first = (self.len - start).min(ell);
        let mut count = self.count_range(start, first);
        if first < ell {
            count += self.count_range(0, ell - first);
        }
        Ok(count)
    }

    /// η^ℓ(x) = ℓ⁻¹ Σ_{i=1..ℓ} η(x+i).
    pub fn box_average(&self, x: usize, ell: usize) -> Result<f64> {
        Ok(self.box_count(x, ell)? as f64 / ell as f64)
    }

    // Popcount over [start, start+len) with start+len <= N.
    fn count_range(&self, start: usize, len: usize) -> usize {
        let end = start + len;
        let mut count = 0usize;
        let mut pos = start;
        while pos < end {
            let (w, b) = (pos >> 6, pos & 63);
            let take = (64 - b).min(end - pos);
            let mut word = self.words[w] >> b;
            if take < 64 {
                word &= (1u64 << take) - 1;
            }
            count += word.count_ones() as usize;
            pos += take;
        }
        count
    }

    /// τ_shift: the ring rotated so that site `shift` becomes site 0.
    pub fn rotated(&self, shift: usize) -> Self {
        let mut out = Self::empty(self.len);
        for x in 0..self.len {
            if self.get(x + shift) == 1 {
                out.set(x, true);
            }
        }
        out
    }

    pub fn occupied_sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&x| self.get(x) == 1)
    }

    /// Low 64 sites as a bitmask (used to index small sector states).
    pub fn to_mask(&self) -> u64 {
        assert!(self.len <= 64);
        self.words[0]
    }

    pub fn to_vec(&self) -> Vec<u8> {
        (0..self.len).map(|x| self.get(x)).collect()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in 0..self.len {
            f.write_str(if self.get(x) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({self})")
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sites = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(invalid("configuration", format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_sites(&sites)
    }
}

pub(crate) fn check_density(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(invalid("rho", format!("{rho} is not in (0, 1)")))
    }
}

/// Mobility χ(ρ) = ρ(1−ρ).
#[inline]
pub fn mobility(rho: f64) -> f64 {
    rho * (1.0 - rho)
}

/// Default minimum ratio between ring size and the diffusive spread `n·⌈√T⌉`.
pub const DEFAULT_RING_FACTOR: usize = 8;
const MIN_RING: usize = 1024;

/// Physical parameters of an experiment: density, scaling parameter, ring size
/// and macroscopic horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rho: f64,
    pub n: u32,
    pub ring_size: usize,
    pub horizon: f64,
    pub ring_factor: usize,
}

impl ModelParams {
    /// Parameters with the default ring `max(1024, 8·n·⌈√T⌉)`.
    pub fn new(rho: f64, n: u32, horizon: f64) -> Result<Self> {
        Self::with_ring_factor(rho, n, horizon, DEFAULT_RING_FACTOR)
    }

    pub fn with_ring_factor(rho: f64, n: u32, horizon: f64, ring_factor: usize) -> Result<Self> {
        let min = Self::min_ring(n, horizon, ring_factor);
        let params = Self {
            rho,
            n,
            ring_size: min.max(MIN_RING),
            horizon,
            ring_factor,
        };
        params.validate()?;
        Ok(params)
    }

    /// Override the ring size; it must still satisfy the ring-factor bound.
    pub fn with_ring_size(mut self, ring_size: usize) -> Result<Self> {
        self.ring_size = ring_size;
        self.validate()?;
        Ok(self)
    }

    fn min_ring(n: u32, horizon: f64, ring_factor: usize) -> usize {
        ring_factor * n as usize * horizon.max(0.0).sqrt().ceil() as usize
    }

    pub fn chi(&self) -> f64 {
        mobility(self.rho)
    }

    /// Microscopic clock value corresponding to macroscopic time `t`.
    pub fn micro_time(&self, t: f64) -> f64 {
        t * (self.n as f64).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        check_density(self.rho)?;
        if self.n == 0 {
            return Err(invalid("n", "scaling parameter must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("{} is not a positive time", self.horizon)));
        }
        if self.ring_factor < DEFAULT_RING_FACTOR {
            return Err(invalid(
                "ring_factor",
                format!("{} is below the minimum {DEFAULT_RING_FACTOR}", self.ring_factor),
            ));
        }
        let min = Self::min_ring(self.n, self.horizon, self.ring_factor);
        if self.ring_size < min {
            return Err(invalid(
                "ring_size",
                format!("{} < ring_factor·n·⌈√T⌉ = {min}", self.ring_size),
            ));
        }
        Ok(())
    }
}

/// A reproducible, splittable random stream: `(master_seed, stream_index)`
/// addresses an independent ChaCha8 keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RandomSource {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Same family, different stream.
    pub fn stream(&self, stream_index: u64) -> Self {
        Self::new(self.master_seed, stream_index)
    }

    /// A fresh family keyed by `tag`, for separating the phases of an experiment.
    pub fn derive(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.master_seed ^ splitmix64(tag)), self.stream_index)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw from ν_ρ restricted to the ring of `params.ring_size` sites.
pub fn sample_product_measure(params: &ModelParams, src: &RandomSource) -> Result<Configuration> {
    params.validate()?;
    Configuration::sample_bernoulli(params.ring_size, params.rho, &mut src.rng())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    #[test]
    fn swap_examples() {
        assert_eq!(cfg("1011").swapped(0), cfg("0111"));
        assert_eq!(cfg("1100").swapped(1), cfg("1010"));
        // bond N-1 wraps onto site 0
        assert_eq!(cfg("0001").swapped(3), cfg("1000"));
    }

    #[test]
    fn box_average_examples() {
        // window (1,0,1,1) to the right of x = 3 on a ring of 5
        let c = cfg("01011");
        assert_eq!(c.box_average(0, 4).unwrap(), 0.75);
        let ones = cfg("1111111");
        for x in 0..7 {
            for ell in 1..=7 {
                assert_eq!(ones.box_average(x, ell).unwrap(), 1.0);
            }
        }
        let c = cfg("0110100");
        for x in 0..7 {
            assert_eq!(c.box_average(x, 1).unwrap(), c.get(x + 1) as f64);
        }
        assert!(c.box_average(0, 8).is_err());
    }

    #[test]
    fn popcount_box_matches_sitewise_count_across_words() {
        let mut rng = RandomSource::new(3, 0).rng();
        let c = Configuration::sample_bernoulli(300, 0.4, &mut rng).unwrap();
        for &(x, ell) in &[(0, 300), (250, 100), (62, 3), (299, 1), (10, 130)] {
            let slow = (1..=ell).map(|i| c.get(x + i) as usize).sum::<usize>();
            assert_eq!(c.box_count(x, ell).unwrap(), slow);
        }
    }

    #[test]
    fn window_bits_wraps() {
        let c = cfg("10000001");
        assert_eq!(c.window_bits(7, 2), 0b11);
        assert_eq!(c.window_bits(6, 3), 0b110);
        let mut rng = RandomSource::new(9, 1).rng();
        let big = Configuration::sample_bernoulli(200, 0.5, &mut rng).unwrap();
        for start in [0, 60, 63, 64, 120, 190, 199] {
            let slow = (0..6).fold(0u64, |acc, i| acc | (big.get(start + i) as u64) << i);
            assert_eq!(big.window_bits(start, 6), slow);
        }
    }

    #[test]
    fn rejects_bad_density() {
        let mut rng = RandomSource::new(0, 0).rng();
        assert!(Configuration::sample_bernoulli(4, 1.5, &mut rng).is_err());
        assert!(Configuration::sample_bernoulli(4, 0.0, &mut rng).is_err());
        assert!(ModelParams::new(1.0, 4, 1.0).is_err());
    }

    #[test]
    fn default_ring_size() {
        let p = ModelParams::new(0.5, 64, 4.0).unwrap();
        assert_eq!(p.ring_size, 1024);
        let p = ModelParams::new(0.5, 128, 9.0).unwrap();
        assert_eq!(p.ring_size, 8 * 128 * 3);
        assert!(ModelParams::new(0.5, 64, 4.0).unwrap().with_ring_size(512).is_err());
    }

    #[test]
    fn site_zero_mean_at_half() {
        let src = RandomSource::new(11, 0);
        let mut rng = src.rng();
        let trials = 1_000_000;
        let hits = (0..trials)
            .filter(|_| Configuration::sample_bernoulli(4, 0.5, &mut rng).unwrap().get(0) == 1)
            .count();
        let mean = hits as f64 / trials as f64;
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
    }

    #[test]
    fn near_full_density_is_almost_all_ones() {
        let rho = 0.999_999;
        let mut rng = RandomSource::new(5, 0).rng();
        let trials = 20_000;
        let full = (0..trials)
            .filter(|_| Configuration::sample_bernoulli(10, rho, &mut rng).unwrap().particle_count() == 10)
            .count();
        let expected = rho.powi(10);
        let p = full as f64 / trials as f64;
        assert!((p - expected).abs() < 5e-4, "{p} vs {expected}");
    }

    #[test]
    fn particle_count_variance_is_binomial() {
        let params = ModelParams {
            rho: 0.3,
            n: 1,
            ring_size: 10_000,
            horizon: 1.0,
            ring_factor: 8,
        };
        let counts: Vec<f64> = (0..1000)
            .map(|k| {
                sample_product_measure(&params, &RandomSource::new(17, k))
                    .unwrap()
                    .particle_count() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        let ratio = var / 10_000.0;
        assert!((ratio - 0.21).abs() < 0.01 * 2.0, "{ratio}");
    }

    #[test]
    fn translation_invariance_of_box_average() {
        let (trials, ell) = (100_000, 5);
        let mut rng = RandomSource::new(23, 0).rng();
        let (mut a, mut b) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
        for _ in 0..trials {
            let c = Configuration::sample_bernoulli(32, 0.3, &mut rng).unwrap();
            a.push(c.box_average(0, ell).unwrap());
            b.push(c.box_average(17, ell).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let se = ((var(&a, ma) + var(&b, mb)) / trials as f64).sqrt();
        assert!((ma - mb).abs() < 4.0 * se, "{ma} {mb} {se}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map({
            let mut r = RandomSource::new(1, 7).rng();
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = RandomSource::new(1, 7).rng();
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..4).map({
            let mut r = RandomSource::new(1, 8).rng();
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn display_round_trip() {
        let c = cfg("0110010");
        assert_eq!(c.to_string(), "0110010");
        assert!("01x".parse::<Configuration>().is_err());
    }

    proptest! {
        #[test]
        fn swaps_conserve_particles(bits in prop::collection::vec(0u8..2, 2..40), moves in prop::collection::vec(0usize..1000, 0..50)) {
            let mut c = Configuration::from_sites(&bits).unwrap();
            let k = c.particle_count();
            for m in moves {
                c.swap(m % c.len());
                prop_assert_eq!(c.particle_count(), k);
                prop_assert_eq!(c.occupied_sites().count(), k);
            }
        }

        #[test]
        fn swap_is_an_involution(bits in prop::collection::vec(0u8..2, 2..40), x in 0usize..40) {
            let c = Configuration::from_sites(&bits).unwrap();
            let x = x % c.len();
            prop_assert_eq!(c.swapped(x).swapped(x), c);
        }
    }
}
