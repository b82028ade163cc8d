//! Additive functionals of particle trajectories: Boltzmann-Gibbs grids,
//! occupation-time and drifted limits, and the KPZ-regime property suite.

use anyhow::{bail, Result};
use fluctuant_core::dynamics::RateModel;
use fluctuant_core::fields::{BoxObserver, GammaObserver, Observer};
use fluctuant_core::localfn::LocalFunction;
use fluctuant_core::outheory::{fbm_amplitude, fbm_covariance, variance_oracle_drift, variance_oracle_fbm};
use fluctuant_core::stats::{
    bound_ratio, hurst_estimate, normality_test, scaling_exponent, summarize, MeanEstimate,
};
use fluctuant_core::{mobility, ModelParams};
use serde::{Deserialize, Serialize};

use super::{
    check_eps, check_ells, check_times, column, combine, model_diffusivity, push_raw, push_summary, raw_table,
    samples, summary_table, Context,
};
use crate::config::ConfigError;
use crate::report::{num, Report, Verdict};

fn scale(params: &ModelParams) -> f64 {
    (params.n as f64).powf(-1.5)
}

/// Box observer with an arbitrary table over the box of `ell` sites starting at `start`.
fn box_with(id: String, start: i64, ell: usize, table: impl Fn(f64) -> f64, params: &ModelParams) -> fluctuant_core::Result<BoxObserver> {
    let t = (0..=ell).map(|m| table(m as f64 / ell as f64)).collect();
    BoxObserver::new(id, start, ell, t, scale(params))
}

fn check_quadratic_f(f: &LocalFunction, rho: f64) -> Result<(), ConfigError> {
    let p = f.phi();
    if p.d1(rho).abs() > 1e-12 {
        return Err(ConfigError::new("experiment.f", "φ′_f(ρ) must vanish for the quadratic branch"));
    }
    Ok(())
}

/// Which side of the local Boltzmann-Gibbs dichotomy a function is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Linear,
    Quadratic,
}

/// Γ_t(f) against its linear or quadratic box replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalBg {
    pub t: f64,
    pub ells: Vec<usize>,
    pub linear_f: Option<LocalFunction>,
    pub quadratic_f: Option<LocalFunction>,
}

impl Default for LocalBg {
    fn default() -> Self {
        Self {
            t: 1.0,
            ells: vec![4, 8, 16, 32, 64],
            linear_f: Some(LocalFunction::monomial(&[0, 1]).add(&LocalFunction::constant(-0.25)).expect("valid")),
            quadratic_f: Some(
                LocalFunction::occupation(0).center(0.5).mul(&LocalFunction::occupation(1).center(0.5)).expect("valid"),
            ),
        }
    }
}

impl LocalBg {
    pub(crate) fn validate(&self, params: &ModelParams) -> Result<(), ConfigError> {
        if !(self.t > 0.0) {
            return Err(ConfigError::new("experiment.t", "must be positive"));
        }
        if self.ells.len() < 3 {
            return Err(ConfigError::new("experiment.ells", "need at least three box sizes"));
        }
        if self.linear_f.is_none() && self.quadratic_f.is_none() {
            return Err(ConfigError::new("experiment.linear_f", "no local function given"));
        }
        if let Some(f) = &self.linear_f {
            check_ells("experiment.ells", &self.ells, f, params.ring_size)?;
            if f.phi().d1(params.rho).abs() < 1e-12 {
                return Err(ConfigError::new("experiment.linear_f", "φ′_f(ρ) vanishes; use quadratic_f"));
            }
        }
        if let Some(f) = &self.quadratic_f {
            check_ells("experiment.ells", &self.ells, f, params.ring_size)?;
            check_quadratic_f(f, params.rho).map_err(|e| ConfigError::new("experiment.quadratic_f", e.message))?;
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "local-bg";
        let p = ctx.params.clone();
        let rho = p.rho;
        let chi = mobility(rho);
        let cases: Vec<(Branch, LocalFunction)> = [(Branch::Linear, &self.linear_f), (Branch::Quadratic, &self.quadratic_f)]
            .into_iter()
            .filter_map(|(b, f)| f.clone().map(|f| (b, f)))
            .collect();
        let ells = self.ells.clone();
        let records = ctx.simulate(&[self.t], || {
            let mut obs: Vec<Box<dyn Observer>> = Vec::new();
            for (b, f) in &cases {
                let tag = branch_tag(*b);
                obs.push(Box::new(GammaObserver::new(format!("gamma_{tag}"), f.clone(), &p)?));
                let phi = f.phi();
                for &l in &ells {
                    let id = format!("box_{tag}_{l}");
                    let o = match b {
                        Branch::Linear => {
                            let d1 = phi.d1(rho);
                            box_with(id, f.min_site() as i64, l, |a| d1 * (a - rho), &p)?
                        }
                        Branch::Quadratic => {
                            let half = phi.d2(rho) / 2.0;
                            box_with(id, f.min_site() as i64, l, |a| half * ((a - rho).powi(2) - chi / l as f64), &p)?
                        }
                    };
                    obs.push(Box::new(o));
                }
            }
            Ok(obs)
        })?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        report.summary = summary_table();
        for (b, _) in &cases {
            let tag = branch_tag(*b);
            let gamma = samples(&records, &format!("gamma_{tag}"));
            let mut lhs = Vec::with_capacity(self.ells.len());
            for &l in &self.ells {
                let id = format!("box_{tag}_{l}");
                let diff = combine(&gamma, &samples(&records, &id), 1.0);
                let col = column(&diff, 0);
                let est = MeanEstimate::second_moment(&col)?;
                push_raw(&mut report.raw, &format!("diff_{tag}_{l}"), &[self.t], &diff);
                push_summary(&mut report.summary, &format!("diff_{tag}"), l as f64, self.t, &col, &est);
                lhs.push(est);
            }
            let grid: Vec<f64> = self.ells.iter().map(|&l| l as f64).collect();
            let t = self.t;
            let br = match b {
                Branch::Linear => bound_ratio(&grid, &lhs, |l| t * l + t * t / (l * l))?,
                Branch::Quadratic => bound_ratio(&grid, &lhs, |l| t * l.ln().powi(2) + t * t / l.powi(3))?,
            };
            report.set(format!("{tag}:fitted_c"), br.fitted_c);
            report.set(format!("{tag}:spread"), br.spread);
            report.series.insert(tag.to_string(), grid.iter().cloned().zip(lhs.iter().cloned()).collect());
            report.verdicts.extend(Verdict::from_ratio(name, &format!("{tag}:ell"), &br));
            if *b == Branch::Quadratic {
                let sharp = bound_ratio(&grid, &lhs, |l| t * l.ln() + t * t / l.powi(3))?;
                report.set("quadratic:sharp_spread", sharp.spread);
                let better = if sharp.spread < br.spread { "t·log ℓ" } else { "t·(log ℓ)²" };
                report.notes.push(format!(
                    "quadratic branch: ratio spread {} against t·log ℓ, {} against t·(log ℓ)²; data favour {better}",
                    num(sharp.spread),
                    num(br.spread)
                ));
            }
        }
        Ok(report)
    }
}

fn branch_tag(b: Branch) -> &'static str {
    match b {
        Branch::Linear => "linear",
        Branch::Quadratic => "quadratic",
    }
}

/// Γ_t(f) against the canonical projection ψ_f(ℓ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneBlock {
    pub f: LocalFunction,
    pub t: f64,
    pub ells: Vec<usize>,
}

impl Default for OneBlock {
    fn default() -> Self {
        Self {
            f: LocalFunction::monomial(&[0, 1]),
            t: 1.0,
            ells: vec![4, 8, 16, 32],
        }
    }
}

impl OneBlock {
    pub(crate) fn validate(&self, params: &ModelParams) -> Result<(), ConfigError> {
        if !(self.t > 0.0) {
            return Err(ConfigError::new("experiment.t", "must be positive"));
        }
        if self.ells.len() < 3 {
            return Err(ConfigError::new("experiment.ells", "need at least three box sizes"));
        }
        check_ells("experiment.ells", &self.ells, &self.f, params.ring_size)?;
        if self.f.variance(params.rho) <= 0.0 {
            return Err(ConfigError::new("experiment.f", "f is constant"));
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "one-block";
        let p = ctx.params.clone();
        let (f, ells) = (self.f.clone(), self.ells.clone());
        let records = ctx.simulate(&[self.t], || {
            let mut obs: Vec<Box<dyn Observer>> = vec![Box::new(GammaObserver::new("gamma", f.clone(), &p)?)];
            for &l in &ells {
                obs.push(Box::new(BoxObserver::psi_box(format!("psi_{l}"), &f, l, &p)?));
            }
            Ok(obs)
        })?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        report.summary = summary_table();
        let gamma = samples(&records, "gamma");
        let mut lhs = Vec::new();
        for &l in &self.ells {
            let diff = combine(&gamma, &samples(&records, &format!("psi_{l}")), 1.0);
            let col = column(&diff, 0);
            let est = MeanEstimate::second_moment(&col)?;
            push_raw(&mut report.raw, &format!("diff_{l}"), &[self.t], &diff);
            push_summary(&mut report.summary, "diff", l as f64, self.t, &col, &est);
            lhs.push(est);
        }
        let var = self.f.variance(p.rho);
        let t = self.t;
        let grid: Vec<f64> = self.ells.iter().map(|&l| l as f64).collect();
        let br = bound_ratio(&grid, &lhs, |l| t * l * l * var)?;
        report.set("fitted_c", br.fitted_c);
        report.set("spread", br.spread);
        report.set("variance_f", var);
        report.series.insert("diff".into(), grid.into_iter().zip(lhs).collect());
        report.verdicts.extend(Verdict::from_ratio(name, "ell", &br));
        Ok(report)
    }
}

/// The dyadic chain ψ_f(ℓ₀) → ψ_f(2^m ℓ₀) and its single renormalization steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoBlocks {
    pub f: LocalFunction,
    pub t: f64,
    pub ell0: usize,
    pub levels: usize,
}

impl Default for TwoBlocks {
    fn default() -> Self {
        Self {
            f: LocalFunction::monomial(&[0, 1]),
            t: 1.0,
            ell0: 2,
            levels: 5,
        }
    }
}

impl TwoBlocks {
    fn ells(&self) -> Vec<usize> {
        (0..=self.levels).map(|m| self.ell0 << m).collect()
    }

    pub(crate) fn validate(&self, params: &ModelParams) -> Result<(), ConfigError> {
        if !(self.t > 0.0) {
            return Err(ConfigError::new("experiment.t", "must be positive"));
        }
        if self.levels < 3 {
            return Err(ConfigError::new("experiment.levels", "need at least three levels"));
        }
        check_ells("experiment.ell0", &self.ells(), &self.f, params.ring_size)
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "two-blocks";
        let p = ctx.params.clone();
        let (f, ells) = (self.f.clone(), self.ells());
        let records = ctx.simulate(&[self.t], || {
            ells.iter()
                .map(|&l| BoxObserver::psi_box(format!("psi_{l}"), &f, l, &p).map(|o| Box::new(o) as Box<dyn Observer>))
                .collect()
        })?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        report.summary = summary_table();
        let psi: Vec<Vec<Vec<f64>>> = ells.iter().map(|l| samples(&records, &format!("psi_{l}"))).collect();
        let linear = self.f.phi().d1(p.rho).abs() > 1e-12;
        let t = self.t;
        let mut chain = Vec::new();
        let mut steps = Vec::new();
        for m in 1..ells.len() {
            let l = ells[m] as f64;
            let d = combine(&psi[0], &psi[m], 1.0);
            let col = column(&d, 0);
            let est = MeanEstimate::second_moment(&col)?;
            push_raw(&mut report.raw, &format!("chain_{}", ells[m]), &[t], &d);
            push_summary(&mut report.summary, "chain", l, t, &col, &est);
            chain.push(est);
            let s = combine(&psi[m - 1], &psi[m], 1.0);
            let col = column(&s, 0);
            let est = MeanEstimate::second_moment(&col)?;
            push_raw(&mut report.raw, &format!("step_{}", ells[m - 1]), &[t], &s);
            push_summary(&mut report.summary, "step", ells[m - 1] as f64, t, &col, &est);
            steps.push(est);
        }
        let chain_grid: Vec<f64> = ells[1..].iter().map(|&l| l as f64).collect();
        let step_grid: Vec<f64> = ells[..ells.len() - 1].iter().map(|&l| l as f64).collect();
        let (chain_br, step_br) = if linear {
            (bound_ratio(&chain_grid, &chain, |l| t * l)?, bound_ratio(&step_grid, &steps, |l| t * l)?)
        } else {
            (
                bound_ratio(&chain_grid, &chain, |l| t * l.ln().powi(2))?,
                bound_ratio(&step_grid, &steps, |_| t)?,
            )
        };
        report.set("chain:fitted_c", chain_br.fitted_c);
        report.set("step:fitted_c", step_br.fitted_c);
        report.verdicts.extend(Verdict::from_ratio(name, "chain:ell", &chain_br));
        report.verdicts.extend(Verdict::from_ratio(name, "step:ell", &step_br));
        Ok(report)
    }
}

/// Occupation time of the origin against the Hurst-3/4 fractional Brownian motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationFbm {
    pub times: Vec<f64>,
    /// Checkpoint at which variance and normality are tested.
    pub t_check: f64,
    pub variance_tol: f64,
    pub hurst: f64,
    pub hurst_tol: f64,
    pub min_p_value: f64,
    pub covariance_tol: f64,
}

impl Default for OccupationFbm {
    fn default() -> Self {
        Self {
            times: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            t_check: 1.0,
            variance_tol: 0.15,
            hurst: 0.75,
            hurst_tol: 0.05,
            min_p_value: 0.01,
            covariance_tol: 0.2,
        }
    }
}

impl OccupationFbm {
    pub(crate) fn validate(&self, model: &RateModel) -> Result<(), ConfigError> {
        check_times("experiment.times", &self.times)?;
        if self.times.len() < 5 {
            return Err(ConfigError::new("experiment.times", "the Hurst fit needs at least five checkpoints"));
        }
        if !self.times.contains(&self.t_check) {
            return Err(ConfigError::new("experiment.t_check", "must be one of the checkpoints"));
        }
        if model_diffusivity(model).is_none() {
            return Err(ConfigError::new("model", "the oracle needs a model with a closed-form diffusion coefficient"));
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "occupation-fbm";
        let p = ctx.params.clone();
        let records = ctx.simulate(&self.times, || {
            Ok(vec![Box::new(GammaObserver::new("gamma", LocalFunction::occupation(0), &p)?) as Box<dyn Observer>])
        })?;
        let Some(d) = model_diffusivity(&ctx.model) else {
            bail!("model has no closed-form diffusion coefficient");
        };
        let amp = fbm_amplitude(d, mobility(p.rho));
        let paths = samples(&records, "gamma");
        let summary = summarize(&paths)?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        push_raw(&mut report.raw, "gamma", &self.times, &paths);
        report.summary = summary_table();
        for (k, &t) in self.times.iter().enumerate() {
            let col = column(&paths, k);
            push_summary(&mut report.summary, "gamma", 0.0, t, &col, &summary.second_moment[k]);
        }
        report.series.insert("second_moment".into(), self.times.iter().cloned().zip(summary.second_moment.iter().cloned()).collect());
        report.set("amplitude", amp);
        report.set("diffusivity", d);
        let k = self.times.iter().position(|&t| t == self.t_check).expect("validated");
        let var = summary.variance[k];
        report.set("variance", var);
        report.verdicts.push(Verdict::relative(
            name,
            format!("variance:t={}", num(self.t_check)),
            var,
            amp * self.t_check.powf(1.5),
            self.variance_tol,
        ));
        let h = hurst_estimate(&paths, &self.times)?;
        report.set("hurst", h.hurst);
        report.set("hurst_stderr", h.stderr);
        report.verdicts.push(Verdict::absolute(name, "hurst", h.hurst, self.hurst, self.hurst_tol));
        let col = column(&paths, k);
        let sd = var.sqrt();
        let mean = summary.mean[k];
        let normalized: Vec<f64> = col.iter().map(|x| (x - mean) / sd).collect();
        let nt = normality_test(&normalized)?;
        report.set("normality_p", nt.p_value);
        report.verdicts.push(Verdict::at_least(name, "normality:p", nt.p_value, self.min_p_value));
        let mut worst: f64 = 0.0;
        for (i, &s) in self.times.iter().enumerate() {
            for (j, &t) in self.times.iter().enumerate().skip(i) {
                let target = fbm_covariance(s, t, amp);
                let rel = (summary.covariance[i][j] / target - 1.0).abs();
                report.set(format!("cov[{},{}]", num(s), num(t)), summary.covariance[i][j]);
                worst = worst.max(rel);
            }
        }
        report.set("covariance_worst_rel", worst);
        report.verdicts.push(Verdict::at_most(name, "covariance:worst_rel", worst, self.covariance_tol));
        Ok(report)
    }
}

/// Γ_t(f) for a general local function: limit variance φ′_f(ρ)² times the occupation-time law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Additive {
    pub f: LocalFunction,
    pub times: Vec<f64>,
    pub tol: f64,
}

impl Default for Additive {
    fn default() -> Self {
        Self {
            f: LocalFunction::monomial(&[0, 1]),
            times: vec![0.5, 1.0],
            tol: 0.2,
        }
    }
}

impl Additive {
    pub(crate) fn validate(&self, params: &ModelParams, model: &RateModel) -> Result<(), ConfigError> {
        check_times("experiment.times", &self.times)?;
        if self.f.phi().d1(params.rho).abs() < 1e-12 {
            return Err(ConfigError::new("experiment.f", "φ′_f(ρ) vanishes; the limit is degenerate"));
        }
        if model_diffusivity(model).is_none() {
            return Err(ConfigError::new("model", "the oracle needs a model with a closed-form diffusion coefficient"));
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "additive-fbm";
        let p = ctx.params.clone();
        let f = self.f.clone();
        let records = ctx.simulate(&self.times, || {
            Ok(vec![
                Box::new(GammaObserver::new("gamma_f", f.clone(), &p)?) as Box<dyn Observer>,
                Box::new(GammaObserver::new("gamma_occ", LocalFunction::occupation(0), &p)?),
            ])
        })?;
        let Some(d) = model_diffusivity(&ctx.model) else {
            bail!("model has no closed-form diffusion coefficient");
        };
        let d1 = self.f.phi().d1(p.rho);
        let chi = mobility(p.rho);
        let gf = samples(&records, "gamma_f");
        let go = samples(&records, "gamma_occ");
        let sf = summarize(&gf)?;
        let so = summarize(&go)?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        push_raw(&mut report.raw, "gamma_f", &self.times, &gf);
        push_raw(&mut report.raw, "gamma_occ", &self.times, &go);
        report.summary = summary_table();
        report.set("phi_prime", d1);
        for (k, &t) in self.times.iter().enumerate() {
            push_summary(&mut report.summary, "gamma_f", 0.0, t, &column(&gf, k), &sf.second_moment[k]);
            push_summary(&mut report.summary, "gamma_occ", 0.0, t, &column(&go, k), &so.second_moment[k]);
            let oracle = d1 * d1 * variance_oracle_fbm(t, d, chi);
            report.set(format!("variance[{}]", num(t)), sf.variance[k]);
            report.verdicts.push(Verdict::relative(name, format!("variance:t={}", num(t)), sf.variance[k], oracle, self.tol));
            let ratio = sf.variance[k] / so.variance[k];
            report.set(format!("ratio_to_occupation[{}]", num(t)), ratio);
            report.verdicts.push(Verdict::relative(name, format!("ratio:t={}", num(t)), ratio, d1 * d1, self.tol));
        }
        Ok(report)
    }
}

/// Occupation time under weak asymmetry against the drifted OU oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Wasep {
    pub times: Vec<f64>,
    pub tol: f64,
}

impl Default for Wasep {
    fn default() -> Self {
        Self {
            times: vec![1.0, 2.0],
            tol: 0.2,
        }
    }
}

impl Wasep {
    pub(crate) fn validate(&self, model: &RateModel) -> Result<(), ConfigError> {
        check_times("experiment.times", &self.times)?;
        match model {
            RateModel::WeaklyAsymmetric { gamma, .. } if *gamma == 1.0 => Ok(()),
            _ => Err(ConfigError::new("model", "needs a wasep model with gamma = 1")),
        }
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "wasep";
        let RateModel::WeaklyAsymmetric { a, .. } = *ctx.model else {
            bail!("wasep needs a weakly asymmetric model");
        };
        let p = ctx.params.clone();
        let records = ctx.simulate(&self.times, || {
            Ok(vec![Box::new(GammaObserver::new("gamma", LocalFunction::occupation(0), &p)?) as Box<dyn Observer>])
        })?;
        let drift = a * (1.0 - 2.0 * p.rho);
        let chi = mobility(p.rho);
        let paths = samples(&records, "gamma");
        let summary = summarize(&paths)?;
        let mut report = Report::new(name);
        report.raw = raw_table();
        push_raw(&mut report.raw, "gamma", &self.times, &paths);
        report.summary = summary_table();
        report.set("drift", drift);
        for (k, &t) in self.times.iter().enumerate() {
            push_summary(&mut report.summary, "gamma", 0.0, t, &column(&paths, k), &summary.second_moment[k]);
            let oracle = variance_oracle_drift(t, drift, chi);
            report.set(format!("variance[{}]", num(t)), summary.variance[k]);
            report.set(format!("oracle[{}]", num(t)), oracle);
            report.verdicts.push(Verdict::relative(name, format!("variance:t={}", num(t)), summary.variance[k], oracle, self.tol));
        }
        Ok(report)
    }
}

/// Z^{n,ε} in the KPZ scaling: Cauchy in ε and a t^{3/2} moment bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kpz {
    /// Widths ε; consecutive pairs (ε, ε/2) are compared.
    pub eps: Vec<f64>,
    pub cauchy_time: f64,
    pub min_slope: f64,
    /// Dyadic times of the moment bound, at the smallest ε.
    pub times: Vec<f64>,
}

impl Default for Kpz {
    fn default() -> Self {
        Self {
            eps: vec![1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0],
            cauchy_time: 1.0,
            min_slope: 0.8,
            times: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

impl Kpz {
    fn all_times(&self) -> Vec<f64> {
        let mut t = self.times.clone();
        if !t.contains(&self.cauchy_time) {
            t.push(self.cauchy_time);
            t.sort_by(f64::total_cmp);
        }
        t
    }

    pub(crate) fn validate(&self, params: &ModelParams) -> Result<(), ConfigError> {
        check_eps("experiment.eps", &self.eps, params)?;
        check_times("experiment.times", &self.times)?;
        if self.eps.len() < 4 {
            return Err(ConfigError::new("experiment.eps", "need at least four widths for three Cauchy pairs"));
        }
        if self.eps.windows(2).any(|w| (w[1] / w[0] - 2.0).abs() > 1e-12) {
            return Err(ConfigError::new("experiment.eps", "widths must be dyadic and increasing"));
        }
        if !(self.cauchy_time > 0.0) {
            return Err(ConfigError::new("experiment.cauchy_time", "must be positive"));
        }
        Ok(())
    }

    pub(crate) fn run(&self, ctx: &Context) -> Result<Report> {
        let name = "kpz";
        let p = ctx.params.clone();
        let eps = self.eps.clone();
        let times = self.all_times();
        let records = ctx.simulate(&times, || {
            eps.iter()
                .enumerate()
                .map(|(i, &e)| BoxObserver::z_box(format!("z_{i}"), e, &p).map(|o| Box::new(o) as Box<dyn Observer>))
                .collect()
        })?;
        let z: Vec<Vec<Vec<f64>>> = (0..self.eps.len()).map(|i| samples(&records, &format!("z_{i}"))).collect();
        let mut report = Report::new(name);
        report.raw = raw_table();
        report.summary = summary_table();
        for (i, e) in self.eps.iter().enumerate() {
            push_raw(&mut report.raw, &format!("z[{}]", num(*e)), &times, &z[i]);
        }
        let kc = times.iter().position(|&t| t == self.cauchy_time).expect("inserted");
        let mut pts = Vec::new();
        let mut cauchy = Vec::new();
        for i in 1..self.eps.len() {
            let d = combine(&z[i], &z[i - 1], 1.0);
            let col = column(&d, kc);
            let est = MeanEstimate::second_moment(&col)?;
            push_summary(&mut report.summary, "cauchy", self.eps[i], self.cauchy_time, &col, &est);
            pts.push((self.eps[i], est.mean));
            cauchy.push((self.eps[i], est));
        }
        report.series.insert("cauchy".into(), cauchy);
        let fit = scaling_exponent(&pts)?;
        report.set("cauchy_slope", fit.slope);
        report.verdicts.push(Verdict::at_least(name, "cauchy:slope", fit.slope, self.min_slope));
        let mut lhs = Vec::new();
        for &t in &self.times {
            let k = times.iter().position(|&s| s == t).expect("present");
            let col = column(&z[0], k);
            let est = MeanEstimate::second_moment(&col)?;
            push_summary(&mut report.summary, "z", self.eps[0], t, &col, &est);
            lhs.push(est);
        }
        report.series.insert("moment".into(), self.times.iter().cloned().zip(lhs.iter().cloned()).collect());
        let br = bound_ratio(&self.times, &lhs, |t| t.powf(1.5))?;
        report.set("moment:fitted_c", br.fitted_c);
        report.set("moment:spread", br.spread);
        report.verdicts.extend(Verdict::from_ratio(name, "t", &br));
        Ok(report)
    }
}
