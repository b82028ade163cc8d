//! Rejection-free continuous-time simulation of the three generator families,
//! with exact-in-time integration of registered observers.

mod sumtree;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sumtree::SumTree;

use crate::error::{invalid, Error, Result};
use crate::fields::Observer;
use crate::lattice::{Configuration, RandomSource};

/// Events between full rebuilds of the rate tree.
pub const REBUILD_INTERVAL: u64 = 1_000_000;
const MAX_SPEED_CHANGE_RADIUS: usize = 8;
const MEAN_TOL: f64 = 1e-12;

/// Configuration-file description of a dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Swap dynamics with rate read from a window around the bond. Either an
    /// explicit `rate_table` (length `2^(2R+2)`, bit `i` ↔ site `i − R` relative
    /// to the bond `(0, 1)`) or the two-parameter family
    /// `r = base + b·(η(−1) + η(2))`.
    SpeedChange {
        #[serde(default)]
        b: Option<f64>,
        #[serde(default)]
        base: Option<f64>,
        #[serde(default)]
        rate_table: Option<Vec<f64>>,
        #[serde(default)]
        epsilon0: Option<f64>,
    },
    /// Exclusion with a mean-zero jump kernel, as `(z, p(z))` pairs.
    MeanZero { kernel: Vec<(i32, f64)> },
    /// Nearest-neighbour exclusion with p_n(±1) = ½(1 ± a·n^−γ).
    Wasep { a: f64, gamma: f64 },
}

impl ModelSpec {
    pub fn ssep() -> Self {
        ModelSpec::SpeedChange {
            b: Some(0.0),
            base: Some(1.0),
            rate_table: None,
            epsilon0: None,
        }
    }
}

/// Speed-change swap rates indexed by the window bits of the bond.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedChange {
    radius: usize,
    table: Vec<f64>,
    epsilon0: f64,
    constant: bool,
}

impl SpeedChange {
    pub fn new(radius: usize, table: Vec<f64>, epsilon0: Option<f64>) -> Result<Self> {
        if radius > MAX_SPEED_CHANGE_RADIUS {
            return Err(invalid("radius", format!("{radius} exceeds {MAX_SPEED_CHANGE_RADIUS}")));
        }
        let width = 2 * radius + 2;
        if table.len() != 1 << width {
            return Err(invalid(
                "rate_table",
                format!("length {} is not 2^{width}", table.len()),
            ));
        }
        let (lo, hi) = table
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let epsilon0 = epsilon0.unwrap_or_else(|| lo.min(1.0 / hi).min(1.0));
        if !(epsilon0 > 0.0 && epsilon0 <= 1.0) {
            return Err(invalid("epsilon0", format!("{epsilon0} is not in (0, 1]")));
        }
        for &r in &table {
            if !(r.is_finite() && r >= epsilon0 && r * epsilon0 <= 1.0 + 4.0 * f64::EPSILON) {
                return Err(Error::EllipticityViolated {
                    rate: r,
                    floor: epsilon0,
                    ceiling: 1.0 / epsilon0,
                });
            }
        }
        let exchanged = 0b11u64 << radius;
        for (w, &r) in table.iter().enumerate() {
            for flip in [1u64 << radius, 1u64 << (radius + 1), exchanged] {
                if table[(w as u64 ^ flip) as usize] != r {
                    return Err(Error::ReversibilityViolated { index: w });
                }
            }
        }
        let constant = table.iter().all(|&r| r == table[0]);
        Ok(Self {
            radius,
            table,
            epsilon0,
            constant,
        })
    }

    /// r = base + b·(η(−1) + η(2)).
    pub fn neighbour_family(base: f64, b: f64, epsilon0: Option<f64>) -> Result<Self> {
        let table = (0..16u32)
            .map(|w| base + b * ((w & 1) + ((w >> 3) & 1)) as f64)
            .collect();
        Self::new(1, table, epsilon0)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Number of sites the rate depends on, including the two exchanged ones.
    pub fn window_len(&self) -> usize {
        2 * self.radius + 2
    }

    #[inline]
    pub fn rate(&self, window: u64) -> f64 {
        self.table[window as usize]
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    #[inline]
    fn bond_rate(&self, cfg: &Configuration, bond: usize) -> f64 {
        if cfg.get(bond) == cfg.get(bond + 1) {
            return 0.0;
        }
        if self.constant {
            return self.table[0];
        }
        let start = wrap_near(bond as i64 - self.radius as i64, cfg.len());
        self.rate(cfg.window_bits(start, self.window_len()))
    }
}

/// Finite-range jump kernel for exclusion dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    jumps: Vec<(i32, f64)>,
    // (d, p(d), p(−d)) for each distance d > 0 in the support of p or its reflection
    pairs: Vec<(usize, f64, f64)>,
}

impl JumpKernel {
    fn new(mut jumps: Vec<(i32, f64)>) -> Result<Self> {
        jumps.retain(|&(_, p)| p != 0.0);
        jumps.sort_by_key(|&(z, _)| z);
        for w in jumps.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(invalid("kernel", format!("jump {} listed twice", w[0].0)));
            }
        }
        for &(z, p) in &jumps {
            if z == 0 {
                return Err(invalid("kernel", "p(0) must vanish"));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid("kernel", format!("p({z}) = {p} is not a positive rate")));
            }
        }
        if jumps.is_empty() {
            return Err(invalid("kernel", "no jumps with positive rate"));
        }
        let mut distances: Vec<usize> = jumps.iter().map(|(z, _)| z.unsigned_abs() as usize).collect();
        distances.sort_unstable();
        distances.dedup();
        let rate = |z: i32| jumps.iter().find(|(y, _)| *y == z).map_or(0.0, |&(_, p)| p);
        let pairs = distances
            .into_iter()
            .map(|d| (d, rate(d as i32), rate(-(d as i32))))
            .collect();
        Ok(Self { jumps, pairs })
    }

    pub fn jumps(&self) -> &[(i32, f64)] {
        &self.jumps
    }

    /// `(d, p(d), p(−d))` for each distance `d > 0` in the support.
    pub(crate) fn pairs(&self) -> &[(usize, f64, f64)] {
        &self.pairs
    }

    pub fn range(&self) -> usize {
        self.jumps.iter().map(|(z, _)| z.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.jumps.iter().map(|&(z, p)| z as f64 * p).sum()
    }

    /// p*(z) = p(−z).
    pub fn reversed(&self) -> Self {
        Self::new(self.jumps.iter().map(|&(z, p)| (-z, p)).collect()).expect("reversal keeps validity")
    }

    /// p^s(z) = (p(z) + p(−z))/2.
    pub fn symmetrized(&self) -> Self {
        let mut out: Vec<(i32, f64)> = Vec::new();
        for &(z, p) in &self.jumps {
            for zz in [z, -z] {
                match out.iter_mut().find(|(y, _)| *y == zz) {
                    Some(e) => e.1 += 0.5 * p,
                    None => out.push((zz, 0.5 * p)),
                }
            }
        }
        Self::new(out).expect("symmetrization keeps validity")
    }

    pub fn rate(&self, z: i32) -> f64 {
        self.jumps.iter().find(|(y, _)| *y == z).map_or(0.0, |&(_, p)| p)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A validated dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum RateModel {
    SpeedChange(SpeedChange),
    MeanZeroExclusion(JumpKernel),
    WeaklyAsymmetric { a: f64, gamma: f64, a_n: f64, kernel: JumpKernel },
}

/// Validate a model specification at scaling parameter `n`.
pub fn build_rate_model(spec: &ModelSpec, n: u32) -> Result<RateModel> {
    match spec {
        ModelSpec::SpeedChange {
            b,
            base,
            rate_table,
            epsilon0,
        } => {
            let sc = match (rate_table, b) {
                (Some(_), Some(_)) => return Err(invalid("model", "give either `rate_table` or `b`, not both")),
                (Some(table), None) => {
                    let len = table.len();
                    if len < 4 || !len.is_power_of_two() || len.trailing_zeros() % 2 != 0 {
                        return Err(invalid("rate_table", format!("length {len} is not 2^(2R+2)")));
                    }
                    let radius = (len.trailing_zeros() as usize - 2) / 2;
                    SpeedChange::new(radius, table.clone(), *epsilon0)?
                }
                (None, b) => SpeedChange::neighbour_family(base.unwrap_or(1.0), b.unwrap_or(0.0), *epsilon0)?,
            };
            Ok(RateModel::SpeedChange(sc))
        }
        ModelSpec::MeanZero { kernel } => {
            let k = JumpKernel::new(kernel.clone())?;
            let mean = k.mean();
            if mean.abs() > MEAN_TOL {
                return Err(Error::MeanNotZero { mean });
            }
            let g = k.jumps.iter().fold(0, |g, (z, _)| gcd(g, z.unsigned_abs()));
            if g != 1 {
                return Err(Error::NotIrreducible {
                    support: k.jumps.iter().map(|(z, _)| *z).collect(),
                });
            }
            Ok(RateModel::MeanZeroExclusion(k))
        }
        ModelSpec::Wasep { a, gamma } => {
            if !(a.is_finite() && gamma.is_finite()) {
                return Err(invalid("model.a", "strength and exponent must be finite"));
            }
            if *gamma != 1.0 && *gamma != 0.5 {
                return Err(invalid("model.gamma", format!("{gamma} is not 1 or 1/2")));
            }
            let a_n = a * (n as f64).powf(-gamma);
            if a_n.abs() > 1.0 {
                return Err(Error::AsymmetryOutOfRange { a_n });
            }
            let mut jumps = vec![(1, 0.5 * (1.0 + a_n)), (-1, 0.5 * (1.0 - a_n))];
            jumps.retain(|&(_, p)| p > 0.0);
            Ok(RateModel::WeaklyAsymmetric {
                a: *a,
                gamma: *gamma,
                a_n,
                kernel: JumpKernel::new(jumps)?,
            })
        }
    }
}

/// An elementary move of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// Exchange across the bond `(bond, bond + 1)`.
    Swap { bond: usize },
    /// A particle at `from` jumps to the empty site `to`.
    Jump { from: usize, to: usize },
}

impl Transition {
    /// The two sites whose occupancies change.
    pub fn sites(&self, ring: usize) -> (usize, usize) {
        match *self {
            Transition::Swap { bond } => (bond, (bond + 1) % ring),
            Transition::Jump { from, to } => (from, to),
        }
    }
}

impl RateModel {
    pub fn kernel(&self) -> Option<&JumpKernel> {
        match self {
            RateModel::SpeedChange(_) => None,
            RateModel::MeanZeroExclusion(k) | RateModel::WeaklyAsymmetric { kernel: k, .. } => Some(k),
        }
    }

    /// Sites on either side of a transition that its rate depends on.
    pub fn interaction_range(&self) -> usize {
        match self {
            RateModel::SpeedChange(sc) => sc.radius + 1,
            _ => self.kernel().map_or(1, JumpKernel::range),
        }
    }

    /// Smallest ring on which the transition bookkeeping is unambiguous.
    pub fn min_ring(&self) -> usize {
        match self {
            RateModel::SpeedChange(sc) if sc.is_constant() => 2,
            RateModel::SpeedChange(sc) => sc.window_len() + 1,
            _ => 2 * self.interaction_range() + 1,
        }
    }

    /// Number of rate-tree leaves on a ring of `ring` sites: one per bond for
    /// swap dynamics, one per unordered pair `(x, x+d)` for exclusion.
    pub fn transition_count(&self, ring: usize) -> usize {
        match self.kernel() {
            None => ring,
            Some(k) => ring * k.pairs.len(),
        }
    }

    /// The move encoded by `leaf` in configuration `cfg`.
    pub fn transition_at(&self, cfg: &Configuration, leaf: usize) -> Transition {
        match self.kernel() {
            None => Transition::Swap { bond: leaf },
            Some(k) => {
                let np = k.pairs.len();
                let (x, c) = (leaf / np, leaf % np);
                let y = wrap_near(x as i64 + k.pairs[c].0 as i64, cfg.len());
                if cfg.get(x) == 1 {
                    Transition::Jump { from: x, to: y }
                } else {
                    Transition::Jump { from: y, to: x }
                }
            }
        }
    }

    /// Exact rate of a transition; zero for moves that leave the configuration unchanged.
    pub fn transition_rate(&self, cfg: &Configuration, t: Transition) -> f64 {
        match (self, t) {
            (RateModel::SpeedChange(sc), Transition::Swap { bond }) => sc.bond_rate(cfg, bond),
            (_, Transition::Jump { from, to }) => {
                let Some(k) = self.kernel() else { return 0.0 };
                if cfg.get(from) == 0 || cfg.get(to) == 1 {
                    return 0.0;
                }
                let n = cfg.len() as i64;
                let d = (to as i64 - from as i64).rem_euclid(n);
                k.jumps
                    .iter()
                    .filter(|&&(z, _)| (z as i64).rem_euclid(n) == d)
                    .map(|&(_, p)| p)
                    .sum()
            }
            _ => 0.0,
        }
    }

    #[inline]
    fn leaf_rate(&self, cfg: &Configuration, leaf: usize) -> f64 {
        match self {
            RateModel::SpeedChange(sc) => sc.bond_rate(cfg, leaf),
            _ => {
                let k = self.kernel().expect("exclusion model has a kernel");
                let np = k.pairs.len();
                let (x, c) = if np == 1 { (leaf, 0) } else { (leaf / np, leaf % np) };
                let (d, forward, backward) = k.pairs[c];
                let y = wrap_near(x as i64 + d as i64, cfg.len());
                match (cfg.get(x), cfg.get(y)) {
                    (1, 0) => forward,
                    (0, 1) => backward,
                    _ => 0.0,
                }
            }
        }
    }

    // Leaves whose rate can change when site `s` flips, pushed into `out`.
    fn dependents(&self, s: usize, ring: usize, out: &mut Vec<usize>) {
        match self {
            RateModel::SpeedChange(sc) => {
                let r = if sc.is_constant() { 1 } else { sc.radius as i64 + 1 };
                for d in -r..r {
                    out.push(wrap_near(s as i64 + d, ring));
                }
            }
            _ => {
                let k = self.kernel().expect("exclusion model has a kernel");
                let np = k.pairs.len();
                for (c, &(d, _, _)) in k.pairs.iter().enumerate() {
                    out.push(s * np + c);
                    out.push(wrap_near(s as i64 - d as i64, ring) * np + c);
                }
            }
        }
    }
}

#[inline]
fn wrap_near(x: i64, ring: usize) -> usize {
    let n = ring as i64;
    if x < 0 {
        if x >= -n {
            (x + n) as usize
        } else {
            x.rem_euclid(n) as usize
        }
    } else if x >= n {
        if x < 2 * n {
            (x - n) as usize
        } else {
            x.rem_euclid(n) as usize
        }
    } else {
        x as usize
    }
}

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }

    pub fn set(&mut self, v: f64) {
        self.sum = v;
        self.comp = 0.0;
    }
}

/// The configuration, its rate tree and clock, and the trajectory's random stream.
#[derive(Debug, Clone)]
pub struct SimulationState {
    cfg: Configuration,
    model: Arc<RateModel>,
    tree: SumTree,
    clock: KahanSum,
    events: u64,
    since_rebuild: u64,
    rng: ChaCha8Rng,
    scratch: Vec<usize>,
}

impl SimulationState {
    pub fn new(model: Arc<RateModel>, cfg: Configuration, src: &RandomSource) -> Result<Self> {
        if cfg.len() < model.min_ring() {
            return Err(Error::SupportOverflow {
                ring: cfg.len(),
                reason: format!("dynamics needs at least {} sites", model.min_ring()),
            });
        }
        let leaves: Vec<f64> = (0..model.transition_count(cfg.len()))
            .map(|i| model.leaf_rate(&cfg, i))
            .collect();
        Ok(Self {
            tree: SumTree::from_values(&leaves),
            cfg,
            model,
            clock: KahanSum::default(),
            events: 0,
            since_rebuild: 0,
            rng: src.rng(),
            scratch: Vec::with_capacity(32),
        })
    }

    pub fn cfg(&self) -> &Configuration {
        &self.cfg
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn clock(&self) -> f64 {
        self.clock.value()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Largest relative difference between a stored leaf and its recomputed rate.
    pub fn max_leaf_drift(&self) -> f64 {
        (0..self.tree.len())
            .map(|i| {
                let exact = self.model.leaf_rate(&self.cfg, i);
                let stored = self.tree.get(i);
                (exact - stored).abs() / exact.abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Recompute every leaf from the configuration.
    pub fn rebuild(&mut self) {
        let leaves: Vec<f64> = (0..self.tree.len())
            .map(|i| self.model.leaf_rate(&self.cfg, i))
            .collect();
        self.tree = SumTree::from_values(&leaves);
        self.since_rebuild = 0;
    }

    /// Waiting time and transition given the two uniforms used by the sampler:
    /// `u_time ∈ (0, 1]` for inversion and `u_select ∈ [0, 1)` for the tree descent.
    /// The configuration is not modified.
    pub fn next_event(&self, u_time: f64, u_select: f64) -> Result<(f64, Transition)> {
        let total = self.tree.total();
        if !(total > 0.0) {
            return Err(Error::FrozenState);
        }
        let dt = -u_time.ln() / total;
        let leaf = self.tree.find(u_select * total);
        Ok((dt, self.model.transition_at(&self.cfg, leaf)))
    }

    /// Apply a transition and refresh the affected leaves.
    pub fn apply(&mut self, t: Transition) {
        let ring = self.cfg.len();
        let (a, b) = t.sites(ring);
        if !self.cfg.exchange(a, b) {
            return;
        }
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        self.model.dependents(a, ring, &mut scratch);
        self.model.dependents(b, ring, &mut scratch);
        scratch.sort_unstable();
        scratch.dedup();
        for &leaf in &scratch {
            let r = self.model.leaf_rate(&self.cfg, leaf);
            self.tree.set_leaf(leaf, r);
        }
        self.tree.propagate(&mut scratch);
        self.scratch = scratch;
        self.events += 1;
        self.since_rebuild += 1;
        if self.since_rebuild >= REBUILD_INTERVAL {
            self.rebuild();
        }
    }

    fn draw(&mut self) -> (f64, f64) {
        let u_time = 1.0 - self.rng.random::<f64>();
        let u_select = self.rng.random::<f64>();
        (u_time, u_select)
    }

    /// One Gillespie step: advance the clock and apply the sampled transition.
    pub fn kmc_step(&mut self) -> Result<(f64, Transition)> {
        let (u_time, u_select) = self.draw();
        let (dt, t) = self.next_event(u_time, u_select)?;
        self.clock.add(dt);
        self.apply(t);
        Ok((dt, t))
    }
}

/// Checkpoint times in macroscopic units; the microscopic clock runs `time_scale` times faster.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub times: Vec<f64>,
    pub time_scale: f64,
}

impl Schedule {
    pub fn new(times: Vec<f64>, time_scale: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(invalid("schedule", "no checkpoint times"));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("schedule", "checkpoint times must be finite, nonnegative and increasing"));
        }
        if !(time_scale > 0.0) {
            return Err(invalid("time_scale", format!("{time_scale} is not positive")));
        }
        Ok(Self { times, time_scale })
    }

    /// Macroscopic time t on a diffusive scale n (microscopic clock t·n²).
    pub fn diffusive(times: Vec<f64>, n: u32) -> Result<Self> {
        Self::new(times, (n as f64).powi(2))
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("schedule is nonempty")
    }
}

/// Event as seen by a replaying oracle: the clock at which it fired and the exchanged sites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedEvent {
    pub clock: f64,
    pub a: usize,
    pub b: usize,
}

/// Per-checkpoint output of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub times: Vec<f64>,
    pub ids: Vec<String>,
    /// `integrals[k][i]`: observer `k` at checkpoint `i`, already scaled.
    pub integrals: Vec<Vec<f64>>,
    /// `snapshots[k][i]`: instantaneous integrand of observer `k` at checkpoint `i`.
    pub snapshots: Vec<Vec<f64>>,
    pub events: u64,
    pub frozen: bool,
    pub log: Option<Vec<LoggedEvent>>,
}

impl ObservationRecord {
    pub fn series(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|k| self.integrals[k].as_slice())
    }
}

/// Options for [`evolve`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EvolveOptions {
    /// Keep the event log for brute-force replay.
    pub log_events: bool,
    /// Full observer recomputation interval in events (0 disables).
    pub refresh_every: u64,
}

/// Run the chain through the schedule, integrating every observer's integrand
/// exactly (it is piecewise constant between events).
pub fn evolve(
    state: &mut SimulationState,
    schedule: &Schedule,
    observers: &mut [Box<dyn Observer>],
    options: EvolveOptions,
) -> Result<ObservationRecord> {
    for o in observers.iter_mut() {
        o.reset(&state.cfg);
    }
    let k = observers.len();
    let mut acc = vec![KahanSum::default(); k];
    let mut integrals = vec![Vec::with_capacity(schedule.times.len()); k];
    let mut snapshots = vec![Vec::with_capacity(schedule.times.len()); k];
    let mut values: Vec<f64> = observers.iter().map(|o| o.value()).collect();
    let mut log = options.log_events.then(Vec::new);
    let mut frozen = false;
    let start = state.clock();
    let refresh = if options.refresh_every == 0 { u64::MAX } else { options.refresh_every };
    let mut since_refresh = 0u64;

    for &t in &schedule.times {
        let target = start + t * schedule.time_scale;
        loop {
            let now = state.clock();
            let pending = if frozen {
                None
            } else {
                let (u_time, u_select) = state.draw();
                match state.next_event(u_time, u_select) {
                    Ok(ev) => Some(ev),
                    Err(Error::FrozenState) => {
                        frozen = true;
                        None
                    }
                    Err(e) => return Err(e),
                }
            };
            match pending {
                Some((dt, tr)) if now + dt <= target => {
                    for (a, v) in acc.iter_mut().zip(&values) {
                        a.add(v * dt);
                    }
                    state.clock.add(dt);
                    state.apply(tr);
                    let (a, b) = tr.sites(state.cfg.len());
                    if let Some(log) = log.as_mut() {
                        log.push(LoggedEvent {
                            clock: state.clock(),
                            a,
                            b,
                        });
                    }
                    since_refresh += 1;
                    let full = since_refresh >= refresh;
                    if full {
                        since_refresh = 0;
                    }
                    for (o, v) in observers.iter_mut().zip(values.iter_mut()) {
                        if full {
                            o.reset(&state.cfg);
                        } else {
                            o.on_exchange(&state.cfg, a, b);
                        }
                        *v = o.value();
                    }
                }
                _ => {
                    // Integrate up to the checkpoint and drop the drawn event:
                    // by memorylessness the wait is redrawn from the checkpoint.
                    let dt = (target - now).max(0.0);
                    for (a, v) in acc.iter_mut().zip(&values) {
                        a.add(v * dt);
                    }
                    state.clock.set(target);
                    break;
                }
            }
        }
        for ((o, a), (ints, snaps)) in observers
            .iter()
            .zip(&acc)
            .zip(integrals.iter_mut().zip(snapshots.iter_mut()))
        {
            ints.push(o.scale() * a.value());
            snaps.push(o.value());
        }
    }
    Ok(ObservationRecord {
        times: schedule.times.clone(),
        ids: observers.iter().map(|o| o.id().to_string()).collect(),
        integrals,
        snapshots,
        events: state.events,
        frozen,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GammaObserver;
    use crate::lattice::ModelParams;
    use crate::localfn::LocalFunction;

    fn state(spec: &ModelSpec, cfg: &str, seed: u64) -> SimulationState {
        let model = Arc::new(build_rate_model(spec, 1).unwrap());
        SimulationState::new(model, cfg.parse().unwrap(), &RandomSource::new(seed, 0)).unwrap()
    }

    #[test]
    fn validation_examples() {
        let mz = ModelSpec::MeanZero {
            kernel: vec![(1, 2.0 / 3.0), (-2, 1.0 / 3.0)],
        };
        assert!(build_rate_model(&mz, 1).is_ok());
        let drift = ModelSpec::MeanZero { kernel: vec![(1, 1.0)] };
        assert!(matches!(build_rate_model(&drift, 1), Err(Error::MeanNotZero { .. })));
        let even = ModelSpec::MeanZero {
            kernel: vec![(2, 0.5), (-2, 0.5)],
        };
        assert!(matches!(build_rate_model(&even, 1), Err(Error::NotIrreducible { .. })));
        let sc = ModelSpec::SpeedChange {
            b: Some(0.5),
            base: None,
            rate_table: None,
            epsilon0: Some(0.5),
        };
        assert!(build_rate_model(&sc, 1).is_ok());
        let too_fast = ModelSpec::SpeedChange {
            b: Some(2.0),
            base: None,
            rate_table: None,
            epsilon0: Some(0.5),
        };
        assert!(matches!(build_rate_model(&too_fast, 1), Err(Error::EllipticityViolated { .. })));
        // rate reads η(0)
        let table: Vec<f64> = (0..16).map(|w| 1.0 + ((w >> 1) & 1) as f64).collect();
        let bad = ModelSpec::SpeedChange {
            b: None,
            base: None,
            rate_table: Some(table),
            epsilon0: None,
        };
        assert!(matches!(build_rate_model(&bad, 1), Err(Error::ReversibilityViolated { .. })));
        let strong = ModelSpec::Wasep { a: 2.0, gamma: 0.5 };
        assert!(matches!(build_rate_model(&strong, 1), Err(Error::AsymmetryOutOfRange { .. })));
        assert!(build_rate_model(&strong, 4).is_ok());
    }

    #[test]
    fn rate_examples() {
        let st = state(&ModelSpec::ssep(), "1000", 0);
        assert_eq!(st.model().transition_rate(st.cfg(), Transition::Swap { bond: 0 }), 1.0);
        assert_eq!(st.model().transition_rate(st.cfg(), Transition::Swap { bond: 1 }), 0.0);
        let w = state(&ModelSpec::Wasep { a: 0.1, gamma: 1.0 }, "0100", 0);
        let m = w.model();
        assert!((m.transition_rate(w.cfg(), Transition::Jump { from: 1, to: 2 }) - 0.55).abs() < 1e-15);
        assert!((m.transition_rate(w.cfg(), Transition::Jump { from: 1, to: 0 }) - 0.45).abs() < 1e-15);
        assert_eq!(m.transition_rate(w.cfg(), Transition::Jump { from: 0, to: 1 }), 0.0);
    }

    #[test]
    fn three_site_waiting_time() {
        let st = state(&ModelSpec::ssep(), "100", 0);
        let active: Vec<usize> = (0..3).filter(|&i| st.tree().get(i) > 0.0).collect();
        assert_eq!(active, vec![0, 2]);
        assert_eq!(st.total_rate(), 2.0);
        let (dt, _) = st.next_event(0.5, 0.3).unwrap();
        assert!((dt - 0.346_573_590_279_972_6).abs() < 1e-15);
        let frozen = state(&ModelSpec::ssep(), "111111", 0);
        assert!(matches!(frozen.next_event(0.5, 0.5), Err(Error::FrozenState)));
    }

    #[test]
    fn particle_count_and_tree_integrity() {
        let spec = ModelSpec::MeanZero {
            kernel: vec![(1, 2.0 / 3.0), (-2, 1.0 / 3.0)],
        };
        let model = Arc::new(build_rate_model(&spec, 1).unwrap());
        let mut rng = RandomSource::new(1, 0).rng();
        let cfg = Configuration::sample_bernoulli(200, 0.4, &mut rng).unwrap();
        let k = cfg.particle_count();
        let mut st = SimulationState::new(model, cfg, &RandomSource::new(1, 1)).unwrap();
        for _ in 0..200_000 {
            st.kmc_step().unwrap();
        }
        assert_eq!(st.cfg().particle_count(), k);
        assert!(st.max_leaf_drift() <= 1e-9);
        let sum: f64 = st.tree().leaves().iter().sum();
        assert!((st.total_rate() - sum).abs() <= 1e-9 * sum);
    }

    #[test]
    fn frozen_observer_integrates_exactly() {
        let params = ModelParams {
            rho: 0.75,
            n: 4,
            ring_size: 8,
            horizon: 1.0,
            ring_factor: 8,
        };
        // f − φ_f(ρ) = 1 − 0.75 on the all-ones ring
        let g = GammaObserver::new("g", LocalFunction::occupation(0), &params).unwrap();
        let mut st = state(&ModelSpec::ssep(), "11111111", 3);
        let mut obs: Vec<Box<dyn Observer>> = vec![Box::new(g)];
        let schedule = Schedule::diffusive(vec![0.5, 1.0], 4).unwrap();
        let rec = evolve(&mut st, &schedule, &mut obs, EvolveOptions::default()).unwrap();
        assert!(rec.frozen);
        assert_eq!(rec.integrals[0], vec![0.25, 0.5]);
        assert_eq!(st.clock(), 16.0);
    }

    #[test]
    fn occupation_is_stationary() {
        let model = Arc::new(build_rate_model(&ModelSpec::ssep(), 1).unwrap());
        let mut rng = RandomSource::new(5, 0).rng();
        // half filling exactly, so the ergodic average is ½ on a ring small enough to mix
        let cfg = Configuration::sample_canonical(16, 8, &mut rng).unwrap();
        let mut st = SimulationState::new(model, cfg, &RandomSource::new(5, 1)).unwrap();
        let (mut occupied, mut total) = (0.0, 0.0);
        for _ in 0..1_000_000 {
            let occ = st.cfg().get(0) as f64;
            let (dt, _) = st.kmc_step().unwrap();
            occupied += occ * dt;
            total += dt;
        }
        assert!((occupied / total - 0.5).abs() < 0.01, "{}", occupied / total);
    }

    #[test]
    fn clock_is_compensated() {
        let mut k = KahanSum::default();
        for _ in 0..10_000_000 {
            k.add(0.1);
        }
        assert!((k.value() - 1_000_000.0).abs() < 1e-6);
    }
}
