//! The named verification experiments, each a thin driver over the core crate.

mod additive;
mod exact;
mod quadratic;
mod reference;

use std::sync::Arc;

use fluctuant_core::dynamics::{ObservationRecord, RateModel, Schedule};
use fluctuant_core::ensemble::run_trajectories;
use fluctuant_core::fields::{IdentityApprox, Observer};
use fluctuant_core::localfn::LocalFunction;
use fluctuant_core::stats::MeanEstimate;
use fluctuant_core::{ModelParams, RandomSource};
use serde::{Deserialize, Serialize};

pub use additive::{Additive, Kpz, LocalBg, OccupationFbm, OneBlock, TwoBlocks, Wasep};
pub use exact::{Blocks, Diffusion, Ensembles, Kv, PsiCase, SpectralGap};
pub use quadratic::QuadraticFields;
pub use reference::OuReference;

use crate::config::{ConfigError, ExperimentConfig};
use crate::report::{num, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Experiment {
    Ensembles(Ensembles),
    SpectralGap(SpectralGap),
    Kv(Kv),
    Blocks(Blocks),
    LocalBg(LocalBg),
    SecondBg(QuadraticFields),
    OneBlock(OneBlock),
    TwoBlocks(TwoBlocks),
    OccupationFbm(OccupationFbm),
    AdditiveFbm(Additive),
    Extensive(QuadraticFields),
    Wasep(Wasep),
    Kpz(Kpz),
    OuReference(OuReference),
    Diffusion(Diffusion),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Ensembles(_) => "ensembles",
            Experiment::SpectralGap(_) => "spectral-gap",
            Experiment::Kv(_) => "kv",
            Experiment::Blocks(_) => "blocks",
            Experiment::LocalBg(_) => "local-bg",
            Experiment::SecondBg(_) => "second-bg",
            Experiment::OneBlock(_) => "one-block",
            Experiment::TwoBlocks(_) => "two-blocks",
            Experiment::OccupationFbm(_) => "occupation-fbm",
            Experiment::AdditiveFbm(_) => "additive-fbm",
            Experiment::Extensive(_) => "extensive",
            Experiment::Wasep(_) => "wasep",
            Experiment::Kpz(_) => "kpz",
            Experiment::OuReference(_) => "ou-reference",
            Experiment::Diffusion(_) => "diffusion",
        }
    }

    /// Last macroscopic checkpoint of particle simulations, 1 otherwise.
    pub fn horizon(&self) -> f64 {
        let last = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let h = match self {
            Experiment::Blocks(e) => e.t,
            Experiment::LocalBg(e) => e.t,
            Experiment::SecondBg(e) | Experiment::Extensive(e) => e.t,
            Experiment::OneBlock(e) => e.t,
            Experiment::TwoBlocks(e) => e.t,
            Experiment::OccupationFbm(e) => last(&e.times),
            Experiment::AdditiveFbm(e) => last(&e.times),
            Experiment::Wasep(e) => last(&e.times),
            Experiment::Kpz(e) => last(&e.times).max(e.cauchy_time),
            _ => 1.0,
        };
        if h > 0.0 {
            h
        } else {
            1.0
        }
    }

    pub fn uses_trajectories(&self) -> bool {
        !matches!(self, Experiment::Ensembles(_) | Experiment::SpectralGap(_))
    }

    pub fn validate(&self, params: &ModelParams, model: &RateModel) -> Result<(), ConfigError> {
        match self {
            Experiment::Ensembles(e) => e.validate(),
            Experiment::SpectralGap(e) => e.validate(model),
            Experiment::Kv(e) => e.validate(),
            Experiment::Blocks(e) => e.validate(params, model),
            Experiment::LocalBg(e) => e.validate(params),
            Experiment::SecondBg(e) | Experiment::Extensive(e) => e.validate(params),
            Experiment::OneBlock(e) => e.validate(params),
            Experiment::TwoBlocks(e) => e.validate(params),
            Experiment::OccupationFbm(e) => e.validate(model),
            Experiment::AdditiveFbm(e) => e.validate(params, model),
            Experiment::Wasep(e) => e.validate(model),
            Experiment::Kpz(e) => e.validate(params),
            Experiment::OuReference(e) => e.validate(),
            Experiment::Diffusion(e) => e.validate(model),
        }
    }
}

/// Validate and run the configured experiment.
pub fn execute(config: &ExperimentConfig) -> anyhow::Result<Report> {
    config.validate()?;
    let ctx = Context::new(config)?;
    let report = match &config.experiment {
        Experiment::Ensembles(e) => e.run(&ctx)?,
        Experiment::SpectralGap(e) => e.run(&ctx)?,
        Experiment::Kv(e) => e.run(&ctx)?,
        Experiment::Blocks(e) => e.run(&ctx)?,
        Experiment::LocalBg(e) => e.run(&ctx)?,
        Experiment::SecondBg(e) => e.run(&ctx, quadratic::Mode::SecondOrder)?,
        Experiment::Extensive(e) => e.run(&ctx, quadratic::Mode::Extensive)?,
        Experiment::OneBlock(e) => e.run(&ctx)?,
        Experiment::TwoBlocks(e) => e.run(&ctx)?,
        Experiment::OccupationFbm(e) => e.run(&ctx)?,
        Experiment::AdditiveFbm(e) => e.run(&ctx)?,
        Experiment::Wasep(e) => e.run(&ctx)?,
        Experiment::Kpz(e) => e.run(&ctx)?,
        Experiment::OuReference(e) => e.run(&ctx)?,
        Experiment::Diffusion(e) => e.run(&ctx)?,
    };
    Ok(report)
}

/// Resolved inputs shared by the drivers.
pub(crate) struct Context {
    pub model: Arc<RateModel>,
    pub params: ModelParams,
    pub trajectories: usize,
    pub workers: Option<usize>,
    pub src: RandomSource,
}

impl Context {
    fn new(config: &ExperimentConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            model: Arc::new(config.rate_model()?),
            params: config.model_params()?,
            trajectories: config.budget.trajectories,
            workers: config.budget.workers,
            src: RandomSource::new(config.seed, 0),
        })
    }

    /// Stationary trajectories checkpointed at macroscopic `times`.
    pub fn simulate<F>(&self, times: &[f64], observers: F) -> fluctuant_core::Result<Vec<ObservationRecord>>
    where
        F: Fn() -> fluctuant_core::Result<Vec<Box<dyn Observer>>> + Sync + Send,
    {
        let schedule = Schedule::diffusive(times.to_vec(), self.params.n)?;
        run_trajectories(&self.model, &self.params, &schedule, self.trajectories, &self.src, self.workers, observers)
    }
}

/// `out[trajectory][checkpoint]` for one observer.
pub(crate) fn samples(records: &[ObservationRecord], id: &str) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| r.series(id).expect("observer id is registered").to_vec())
        .collect()
}

/// Pointwise `a − c·b`.
pub(crate) fn combine(a: &[Vec<f64>], b: &[Vec<f64>], c: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - c * v).collect())
        .collect()
}

pub(crate) fn column(paths: &[Vec<f64>], k: usize) -> Vec<f64> {
    paths.iter().map(|p| p[k]).collect()
}

/// Raw table rows `(trajectory, observable, t, value)`.
pub(crate) fn push_raw(raw: &mut Table, name: &str, times: &[f64], paths: &[Vec<f64>]) {
    for (i, p) in paths.iter().enumerate() {
        for (t, v) in times.iter().zip(p) {
            raw.push(vec![i.to_string(), name.to_string(), num(*t), num(*v)]);
        }
    }
}

pub(crate) fn raw_table() -> Table {
    Table::new(&["trajectory", "observable", "t", "value"])
}

pub(crate) fn summary_table() -> Table {
    Table::new(&["observable", "grid", "t", "count", "mean", "second_moment", "stderr", "ci_lo", "ci_hi"])
}

pub(crate) fn push_summary(summary: &mut Table, name: &str, grid: f64, t: f64, values: &[f64], est: &MeanEstimate) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    summary.push(vec![
        name.to_string(),
        num(grid),
        num(t),
        est.count.to_string(),
        num(mean),
        num(est.mean),
        num(est.stderr),
        num(est.ci_lo),
        num(est.ci_hi),
    ]);
}

/// Hydrodynamic diffusion coefficient when it is known in closed form.
pub fn model_diffusivity(model: &RateModel) -> Option<f64> {
    match model {
        RateModel::SpeedChange(sc) if sc.is_constant() => Some(sc.table()[0]),
        RateModel::SpeedChange(_) => None,
        RateModel::MeanZeroExclusion(k) | RateModel::WeaklyAsymmetric { kernel: k, .. } => {
            Some(0.5 * k.jumps().iter().map(|&(z, p)| (z as f64).powi(2) * p).sum::<f64>())
        }
    }
}

pub(crate) fn check_ells(field: &str, ells: &[usize], f: &LocalFunction, ring: usize) -> Result<(), ConfigError> {
    if ells.is_empty() {
        return Err(ConfigError::new(field, "grid is empty"));
    }
    for &l in ells {
        if l < f.diameter().max(1) {
            return Err(ConfigError::new(field, format!("ℓ = {l} is below the support diameter {}", f.diameter())));
        }
        if l + f.diameter() >= ring {
            return Err(ConfigError::new(field, format!("ℓ = {l} does not fit the ring of {ring} sites")));
        }
    }
    Ok(())
}

pub(crate) fn check_eps(field: &str, eps: &[f64], params: &ModelParams) -> Result<(), ConfigError> {
    if eps.is_empty() {
        return Err(ConfigError::new(field, "grid is empty"));
    }
    for &e in eps {
        let len = IdentityApprox::new(e, 0.0)
            .and_then(|a| a.box_len(params.n))
            .map_err(|err| ConfigError::new(field, err.to_string()))?;
        if len >= params.ring_size / 2 {
            return Err(ConfigError::new(field, format!("box of {len} sites does not fit the ring")));
        }
    }
    Ok(())
}

pub(crate) fn check_times(field: &str, times: &[f64]) -> Result<(), ConfigError> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::new(field, "times must be positive and increasing"));
    }
    Ok(())
}

pub(crate) fn dyadic(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |&l| Some(l * 2)).take_while(|&l| l <= to).collect()
}
