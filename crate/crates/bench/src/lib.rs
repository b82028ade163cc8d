//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use fluctuant_core::{build_rate_model, Configuration, ModelSpec, RandomSource, SimulationState};

/// A Bernoulli-started state on a ring of `ring` sites.
pub fn state(spec: &ModelSpec, ring: usize, rho: f64, seed: u64) -> SimulationState {
    let model = Arc::new(build_rate_model(spec, 64).expect("valid model"));
    let src = RandomSource::new(seed, 0);
    let cfg = Configuration::sample_bernoulli(ring, rho, &mut src.stream(1).rng()).expect("valid density");
    SimulationState::new(model, cfg, &src.stream(2)).expect("ring fits the model")
}
