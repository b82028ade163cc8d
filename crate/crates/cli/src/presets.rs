//! Built-in configurations, one per named experiment, sized for `verify`.

use std::path::PathBuf;

use fluctuant_core::dynamics::ModelSpec;

use crate::config::{Budget, ExperimentConfig, ParamsBlock};
use crate::experiments::*;

pub const NAMES: [&str; 15] = [
    "ensembles",
    "spectral-gap",
    "kv",
    "blocks",
    "local-bg",
    "second-bg",
    "one-block",
    "two-blocks",
    "occupation-fbm",
    "additive-fbm",
    "extensive",
    "wasep",
    "kpz",
    "ou-reference",
    "diffusion",
];

pub const DEFAULT_SEED: u64 = 20240611;

fn params(rho: f64, n: u32, ring_size: Option<usize>) -> ParamsBlock {
    ParamsBlock {
        rho,
        n,
        ring_size,
        ring_factor: None,
        horizon: None,
    }
}

fn neighbour(b: f64) -> ModelSpec {
    ModelSpec::SpeedChange {
        b: Some(b),
        base: Some(1.0),
        rate_table: None,
        epsilon0: Some(0.5),
    }
}

/// `r = 1 + η(−1)η(2)`, a non-gradient speed change.
pub fn non_gradient() -> ModelSpec {
    let table = (0..16u32).map(|w| 1.0 + ((w & 1) * ((w >> 3) & 1)) as f64).collect();
    ModelSpec::SpeedChange {
        b: None,
        base: None,
        rate_table: Some(table),
        epsilon0: Some(0.5),
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let ssep = ModelSpec::ssep();
    let (model, params, trajectories, experiment) = match name {
        "ensembles" => (ssep, params(0.5, 64, None), 0, Experiment::Ensembles(Ensembles::default())),
        "spectral-gap" => (neighbour(0.5), params(0.5, 64, None), 0, Experiment::SpectralGap(SpectralGap::default())),
        "kv" => (ssep, params(0.5, 64, None), 10_000, Experiment::Kv(Kv::default())),
        "blocks" => (neighbour(0.5), params(0.5, 8, Some(64)), 2000, Experiment::Blocks(Blocks::default())),
        "local-bg" => (ssep, params(0.5, 64, Some(512)), 400, Experiment::LocalBg(LocalBg::default())),
        "second-bg" => (ssep, params(0.5, 64, Some(512)), 400, Experiment::SecondBg(QuadraticFields::default())),
        "one-block" => (ssep, params(0.5, 64, Some(512)), 200, Experiment::OneBlock(OneBlock::default())),
        "two-blocks" => (ssep, params(0.5, 64, Some(512)), 200, Experiment::TwoBlocks(TwoBlocks::default())),
        "occupation-fbm" => (
            ModelSpec::Wasep { a: 0.0, gamma: 1.0 },
            params(0.5, 64, Some(1024)),
            1000,
            Experiment::OccupationFbm(OccupationFbm::default()),
        ),
        "additive-fbm" => (ssep, params(0.3, 64, None), 400, Experiment::AdditiveFbm(Additive::default())),
        "extensive" => (ssep, params(0.5, 128, Some(1024)), 200, Experiment::Extensive(QuadraticFields::default())),
        "wasep" => (
            ModelSpec::Wasep { a: 2.0, gamma: 1.0 },
            params(0.3, 64, None),
            400,
            Experiment::Wasep(Wasep::default()),
        ),
        "kpz" => (
            ModelSpec::Wasep { a: 1.0, gamma: 0.5 },
            params(0.5, 64, None),
            400,
            Experiment::Kpz(Kpz::default()),
        ),
        "ou-reference" => (ssep, params(0.5, 64, None), 20_000, Experiment::OuReference(OuReference::default())),
        "diffusion" => (non_gradient(), params(0.5, 64, None), 2000, Experiment::Diffusion(Diffusion::default())),
        _ => return None,
    };
    Some(ExperimentConfig {
        seed: DEFAULT_SEED,
        output_dir: PathBuf::from("fluctuant-out").join(name),
        model,
        params,
        budget: Budget {
            trajectories,
            workers: None,
        },
        experiment,
    })
}
