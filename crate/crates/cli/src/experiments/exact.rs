//! Experiments built on exact finite-volume algebra.

use std::str::FromStr;
use anyhow::{bail, Result};
use fluctuant_core::dynamics::{RateModel, SpeedChange};
use fluctuant_core::localfn::{Correction, LocalFunction};
use fluctuant_core::spectral::{
    block_orthogonality_check, build_sector_generator, calibrate_kappa0, dynamic_diffusion, h_minus_one, kv_check,
    spectral_gap, variational_d, FiniteSector,
};
use fluctuant_core::stats::scaling_exponent;
use fluctuant_core::ModelParams;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::{check_ells, check_times, dyadic, Context};
use crate::config::ConfigError;
use crate::report::{num, Report, Table, Verdict};

fn lf(s: &str) -> LocalFunction {
    s.parse().expect("built-in local function literal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiCase {
    pub f: LocalFunction,
    pub rho: f64,
    pub slope: f64,
    pub tol: f64,
}

impl Default for PsiCase {
    fn default() -> Self {
        Self {
            f: LocalFunction::monomial(&[1, 2]).add(&LocalFunction::constant(-0.25)).expect("valid"),
            rho: 0.5,
            slope: -1.0,
            tol: 0.1,
        }
    }
}

/// Equivalence-of-ensembles residuals and ψ-variance decay rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ensembles {
    pub f: LocalFunction,
    pub ells: Vec<usize>,
    pub correction: Correction,
    /// Allowed max/min of ℓ²·residual over the grid.
    pub band: f64,
    pub slope: f64,
    pub slope_tol: f64,
    pub spot_ell: usize,
    pub spot_correction: Correction,
    /// Exact rational residual at `spot_ell`; empty to skip.
    pub spot_value: String,
    pub psi_cases: Vec<PsiCase>,
}

impl Default for Ensembles {
    fn default() -> Self {
        Self {
            f: LocalFunction::monomial(&[1, 2]),
            ells: dyadic(8, 1024),
            correction: Correction::Add,
            band: 2.0,
            slope: -2.0,
            slope_tol: 0.15,
            spot_ell: 4,
            spot_correction: Correction::Subtract,
            spot_value: "7/48".into(),
            psi_cases: vec![
                PsiCase::default(),
                PsiCase {
                    f: LocalFunction::occupation(1)
                        .center(0.5)
                        .mul(&LocalFunction::occupation(2).center(0.5))
                        .expect("valid"),
                    rho: 0.5,
                    slope: -2.0,
                    tol: 0.15,
                },
            ],
        }
    }
}

impl Ensembles {
    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        check_ells("experiment.ells", &self.ells, &self.f, usize::MAX)?;
        if self.ells.len() < 3 {
            return Err(ConfigError::new("experiment.ells", "need at least three box sizes for a slope"));
        }
        if !self.spot_value.is_empty() && BigRational::from_str(&self.spot_value).is_err() {
            return Err(ConfigError::new("experiment.spot_value", format!("{:?} is not a rational", self.spot_value)));
        }
        for (i, c) in self.psi_cases.iter().enumerate() {
            if !(c.rho > 0.0 && c.rho < 1.0) {
                return Err(ConfigError::new(format!("experiment.psi_cases[{i}].rho"), "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub(crate) fn run(&self, _ctx: &Context) -> Result<Report> {
        let name = "ensembles";
        let mut report = Report::new(name);
        report.raw = Table::new(&["quantity", "function", "ell", "value", "scaled"]);
        let mut scaled = Vec::with_capacity(self.ells.len());
        let mut points = Vec::with_capacity(self.ells.len());
        for &l in &self.ells {
            let r = self.f.ensembles_residual(l, self.correction)?;
            let s = r * (l * l) as f64;
            report.raw.push(vec!["residual".into(), self.f.to_string(), l.to_string(), num(r), num(s)]);
            scaled.push(s);
            points.push((l as f64, r));
        }
        let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
        let fit = scaling_exponent(&points)?;
        report.set("residual_band", hi / lo);
        report.set("residual_slope", fit.slope);
        report.verdicts.push(Verdict::at_most(name, "residual:band", hi / lo, self.band));
        report.verdicts.push(Verdict::absolute(name, "residual:slope", fit.slope, self.slope, self.slope_tol));
        if !self.spot_value.is_empty() {
            let exact = self.f.ensembles_residual_exact(self.spot_ell, self.spot_correction)?;
            let target = BigRational::from_str(&self.spot_value).expect("validated");
            report.notes.push(format!("residual({}) = {exact}", self.spot_ell));
            report.set("residual_spot", num_traits::ToPrimitive::to_f64(&exact).unwrap_or(f64::NAN));
            report.verdicts.push(Verdict::flag(name, format!("residual({})={}", self.spot_ell, self.spot_value), exact == target));
        }
        report.summary = Table::new(&["quantity", "function", "rho", "slope", "slope_stderr", "r_squared"]);
        report.summary.push(vec![
            "residual".into(),
            self.f.to_string(),
            String::new(),
            num(fit.slope),
            num(fit.slope_stderr),
            num(fit.r_squared),
        ]);
        for (i, c) in self.psi_cases.iter().enumerate() {
            let mut pts = Vec::with_capacity(self.ells.len());
            for &l in &self.ells {
                let v = c.f.psi_variance(l, c.rho)?;
                report.raw.push(vec![format!("psi_variance[{i}]"), c.f.to_string(), l.to_string(), num(v), num(v * l as f64)]);
                pts.push((l as f64, v));
            }
            let fit = scaling_exponent(&pts)?;
            report.summary.push(vec![
                format!("psi_variance[{i}]"),
                c.f.to_string(),
                num(c.rho),
                num(fit.slope),
                num(fit.slope_stderr),
                num(fit.r_squared),
            ]);
            report.set(format!("psi_slope[{i}]"), fit.slope);
            report.verdicts.push(Verdict::absolute(name, format!("psi_variance[{i}]:slope"), fit.slope, c.slope, c.tol));
        }
        Ok(report)
    }
}

/// Interval spectral gaps of SSEP and of the configured speed-change model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralGap {
    pub max_ell: usize,
    /// Allowed max/min of gap·ℓ² over all SSEP sectors.
    pub band: f64,
    /// `(ℓ, k, gap)` values the SSEP sweep must reproduce.
    pub exact: Vec<(usize, usize, f64)>,
    pub exact_tol: f64,
}

impl Default for SpectralGap {
    fn default() -> Self {
        Self {
            max_ell: 10,
            band: 3.0,
            exact: vec![(2, 1, 2.0), (3, 1, 1.0)],
            exact_tol: 1e-12,
        }
    }
}

impl SpectralGap {
    pub(crate) fn validate(&self, model: &RateModel) -> Result<(), ConfigError> {
        if !(2..=16).contains(&self.max_ell) {
            return Err(ConfigError::new("experiment.max_ell", "must lie in 2..=16"));
        }
        if !matches!(model, RateModel::SpeedChange(_)) {
            return Err(ConfigError::new("model.type", "spectral-gap compares a speed_change model with SSEP"));
        }
        for (i, &(l, k, _)) in self.exact.iter().enumerate() {
            if k == 0 || k >= l || l > self.max_ell {
                return Err(ConfigError::new(format!("experiment.exact[{i}]"), "needs 0 < k < ℓ ≤ max_ell"));
            }
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "spectral-gap";
        let mut report = Report::new(name);
        let RateModel::SpeedChange(sc) = ctx.model.as_ref() else {
            bail!("spectral-gap needs a speed_change model");
        };
        let eps0 = sc.epsilon0();
        let ssep = RateModel::SpeedChange(SpeedChange::new(0, vec![1.0; 4], None)?);
        report.raw = Table::new(&["model", "geometry", "ell", "k", "gap", "gap_times_ell2"]);
        let mut band = (f64::MAX, f64::MIN);
        let mut transfer_ok = true;
        let mut worst_transfer = (f64::MAX, f64::MIN);
        let mut ssep_gaps = Vec::new();
        for ell in 2..=self.max_ell {
            for k in 1..ell {
                let sector = FiniteSector::interval(ell, k)?;
                let g0 = spectral_gap(&build_sector_generator(&ssep, &sector)?)?;
                let g1 = spectral_gap(&build_sector_generator(&ctx.model, &sector)?)?;
                let l2 = (ell * ell) as f64;
                report.raw.push(vec!["ssep".into(), "interval".into(), ell.to_string(), k.to_string(), num(g0), num(g0 * l2)]);
                report.raw.push(vec!["model".into(), "interval".into(), ell.to_string(), k.to_string(), num(g1), num(g1 * l2)]);
                band = (band.0.min(g0 * l2), band.1.max(g0 * l2));
                let q = g1 / g0;
                worst_transfer = (worst_transfer.0.min(q), worst_transfer.1.max(q));
                if !(q >= eps0 * (1.0 - 1e-12) && q <= (1.0 + 1e-12) / eps0) {
                    transfer_ok = false;
                }
                ssep_gaps.push((ell, k, g0));
            }
        }
        for &(l, k, expected) in &self.exact {
            let g = ssep_gaps.iter().find(|s| s.0 == l && s.1 == k).expect("validated").2;
            report.verdicts.push(Verdict::absolute(name, format!("gap({l},{k})"), g, expected, self.exact_tol));
        }
        report.set("band_ratio", band.1 / band.0);
        report.verdicts.push(Verdict::at_most(name, "gap_ell2:band", band.1 / band.0, self.band));
        report.set("transfer_min", worst_transfer.0);
        report.set("transfer_max", worst_transfer.1);
        let mut v = Verdict::flag(name, format!("transfer in [{},{}]", num(eps0), num(1.0 / eps0)), transfer_ok);
        v.lhs = worst_transfer.0;
        v.lhs_ci_hi = worst_transfer.1;
        report.verdicts.push(v);
        let kappa = calibrate_kappa0(self.max_ell)?;
        report.set("kappa0", kappa.value);
        report.summary = Table::new(&["quantity", "value"]);
        for (k, v) in &report.values {
            report.summary.push(vec![k.clone(), num(*v)]);
        }
        Ok(report)
    }
}

/// Exact H₋₁ norm on a ring sector and the Monte Carlo Kipnis-Varadhan check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kv {
    pub ring: usize,
    pub particles: usize,
    pub f: LocalFunction,
    /// Microscopic times of the sector chain.
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_h_minus_one: Option<f64>,
    pub tol: f64,
}

impl Default for Kv {
    fn default() -> Self {
        Self {
            ring: 4,
            particles: 2,
            f: lf("[[1],1.0],[[2],-1.0]"),
            times: vec![1.0, 5.0, 25.0],
            expected_h_minus_one: Some(0.25),
            tol: 1e-12,
        }
    }
}

impl Kv {
    pub(crate) fn validate(&self) -> Result<(), ConfigError> {
        if self.ring < 2 || self.particles == 0 || self.particles >= self.ring {
            return Err(ConfigError::new("experiment.particles", "need 0 < k < N"));
        }
        check_times("experiment.times", &self.times)
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "kv";
        let mut report = Report::new(name);
        let sector = FiniteSector::ring(self.ring, self.particles)?;
        let g = build_sector_generator(&ctx.model, &sector)?;
        let fv = sector.local_function(&self.f)?;
        let h = h_minus_one(&g, &fv)?;
        report.set("h_minus_one_sq", h);
        if let Some(expected) = self.expected_h_minus_one {
            report.verdicts.push(Verdict::absolute(name, "h_minus_one_sq", h, expected, self.tol));
        }
        let kv = kv_check(&g, &fv, &self.times, ctx.trajectories, &ctx.src, ctx.workers)?;
        report.raw = Table::new(&["f_id", "t", "h_minus_one_sq", "kv_bound", "lhs_ci_lo", "lhs_ci_hi", "verdict"]);
        for p in &kv.points {
            report.raw.push(vec![
                self.f.to_string(),
                num(p.t),
                num(h),
                num(p.bound),
                num(p.lhs.ci_lo),
                num(p.lhs.ci_hi),
                if p.pass { "PASS" } else { "FAIL" }.into(),
            ]);
            report.verdicts.push(Verdict::ci_below(name, format!("t={}", num(p.t)), &p.lhs, p.bound));
            report.series.entry("lhs".into()).or_default().push((p.t, p.lhs));
        }
        report.set("long_run_ratio", kv.long_run_ratio);
        report.summary = report.raw.clone();
        Ok(report)
    }
}

/// Summed bound for local functions with disjoint supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Blocks {
    pub blocks: Vec<LocalFunction>,
    pub t: f64,
    pub kappa_max_ell: usize,
}

impl Default for Blocks {
    fn default() -> Self {
        Self {
            blocks: vec![
                lf("[[0],1.0],[[1],-1.0]"),
                lf("[[3],1.0],[[5],-1.0]"),
                lf("[[8,9],1.0],[[10,11],-1.0]"),
            ],
            t: 1.0,
            kappa_max_ell: 10,
        }
    }
}

impl Blocks {
    pub(crate) fn validate(&self, params: &ModelParams, model: &RateModel) -> Result<(), ConfigError> {
        if !matches!(model, RateModel::SpeedChange(_)) {
            return Err(ConfigError::new("model.type", "the block bound is stated for speed_change dynamics"));
        }
        if self.blocks.is_empty() {
            return Err(ConfigError::new("experiment.blocks", "no local functions"));
        }
        for (i, f) in self.blocks.iter().enumerate() {
            if !f.is_mean_zero_for_all_densities(1e-12) {
                return Err(ConfigError::new(format!("experiment.blocks[{i}]"), "φ_f must vanish identically"));
            }
            if f.max_site() as usize >= params.ring_size {
                return Err(ConfigError::new(format!("experiment.blocks[{i}]"), "support exceeds the ring"));
            }
        }
        if !(self.t > 0.0) {
            return Err(ConfigError::new("experiment.t", "must be positive"));
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "blocks";
        let mut report = Report::new(name);
        let kappa = calibrate_kappa0(self.kappa_max_ell)?;
        let micro = ctx.params.micro_time(self.t);
        let r = block_orthogonality_check(
            &ctx.model,
            ctx.params.ring_size,
            ctx.params.rho,
            &self.blocks,
            micro,
            kappa.value,
            ctx.trajectories,
            &ctx.src,
            ctx.workers,
        )?;
        report.set("kappa0", kappa.value);
        report.set("additivity", r.additivity);
        report.set("sum_of_squares", r.sum_of_squares);
        report.verdicts.push(Verdict::ci_below(name, format!("T={}", num(micro)), &r.lhs, r.bound));
        report.summary = Table::new(&["T", "lhs", "lhs_ci_hi", "sum_of_squares", "additivity", "bound", "kappa0", "epsilon0"]);
        report.summary.push(vec![
            num(micro),
            num(r.lhs.mean),
            num(r.lhs.ci_hi),
            num(r.sum_of_squares),
            num(r.additivity),
            num(r.bound),
            num(r.kappa0),
            num(r.epsilon0),
        ]);
        report.raw = report.summary.clone();
        Ok(report)
    }
}

/// Variational diffusion coefficient and a dynamic density-relaxation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diffusion {
    pub radius: usize,
    /// Ring of the relaxation measurement; its times are in units of `ring²`.
    pub ring: usize,
    pub amplitude: f64,
    pub times: Vec<f64>,
    /// Independent seeds for the reproducibility check.
    pub seeds: usize,
    pub reproducibility: f64,
}

impl Default for Diffusion {
    fn default() -> Self {
        Self {
            radius: 3,
            ring: 64,
            amplitude: 0.4,
            times: (1..=8).map(|i| i as f64 * 0.0025).collect(),
            seeds: 3,
            reproducibility: 0.1,
        }
    }
}

impl Diffusion {
    pub(crate) fn validate(&self, model: &RateModel) -> Result<(), ConfigError> {
        if !matches!(model, RateModel::SpeedChange(_)) {
            return Err(ConfigError::new("model.type", "the variational formula is implemented for speed_change dynamics"));
        }
        if self.radius > 5 {
            return Err(ConfigError::new("experiment.radius", "at most 5"));
        }
        if self.ring < model.min_ring() || self.ring < 8 {
            return Err(ConfigError::new("experiment.ring", "ring too small for the model"));
        }
        if self.seeds < 2 {
            return Err(ConfigError::new("experiment.seeds", "need at least two seeds"));
        }
        check_times("experiment.times", &self.times)
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "diffusion";
        let mut report = Report::new(name);
        let RateModel::SpeedChange(sc) = ctx.model.as_ref() else {
            bail!("diffusion needs a speed_change model");
        };
        let rho = ctx.params.rho;
        let ssep = SpeedChange::new(0, vec![1.0; 4], None)?;
        let empty = variational_d(&ssep, rho, 0)?.by_radius[0];
        report.set("ssep_empty_basis", empty);
        report.verdicts.push(Verdict::absolute(name, "ssep_empty_basis", empty, 2.0, 4.0 * f64::EPSILON));
        let d = variational_d(sc, rho, self.radius)?;
        report.raw = Table::new(&["quantity", "index", "value"]);
        for (r, v) in d.by_radius.iter().enumerate() {
            report.raw.push(vec!["variational".into(), r.to_string(), num(*v)]);
            report.set(format!("variational[{r}]"), *v);
        }
        let monotone = d.by_radius.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        report.verdicts.push(Verdict::flag(name, "variational:nonincreasing", monotone));
        if d.ill_conditioned {
            report.notes.push("variational Gram matrix is ill-conditioned; its null directions were dropped".into());
        }
        let micro: Vec<f64> = self.times.iter().map(|t| t * (self.ring * self.ring) as f64).collect();
        let mut dynamic = Vec::with_capacity(self.seeds);
        for s in 0..self.seeds {
            let src = ctx.src.derive(s as u64 + 1);
            let m = dynamic_diffusion(&ctx.model, self.ring, rho, self.amplitude, &micro, ctx.trajectories, &src, ctx.workers)?;
            report.raw.push(vec!["dynamic".into(), s.to_string(), num(m.value)]);
            dynamic.push(m.value);
        }
        let hi = dynamic.iter().cloned().fold(f64::MIN, f64::max);
        let lo = dynamic.iter().cloned().fold(f64::MAX, f64::min);
        let mean = dynamic.iter().sum::<f64>() / dynamic.len() as f64;
        report.set("dynamic_mean", mean);
        report.set("dynamic_spread", hi / lo - 1.0);
        report.verdicts.push(Verdict::at_most(name, "dynamic:seed_spread", hi / lo - 1.0, self.reproducibility));
        let ratio = d.value / mean;
        report.set("variational_over_dynamic", ratio);
        report.notes.push(format!("variational/dynamic = {ratio:.4} (reported, no threshold)"));
        report.summary = Table::new(&["quantity", "value"]);
        for (k, v) in &report.values {
            report.summary.push(vec![k.clone(), num(*v)]);
        }
        Ok(report)
    }
}
