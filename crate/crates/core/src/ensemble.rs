//! Deterministic parallel execution over trajectory indices.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{evolve, EvolveOptions, ObservationRecord, RateModel, Schedule, SimulationState};
use crate::error::{invalid, Result};
use crate::fields::Observer;
use crate::lattice::{sample_product_measure, ModelParams, RandomSource};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "FLUCTUANT_WORKERS";

/// Worker count: the explicit request, else the environment override, else all cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .filter(|&w| w > 0)
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&w| w > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluate `f(0..count)` on a work-stealing pool. Results come back in index
/// order, so the output does not depend on the number of workers.
pub fn run_indexed<T, F>(count: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let threads = worker_count(workers);
    if threads == 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Independent stationary trajectories of `model`: trajectory `i` draws its
/// initial configuration from stream `2i` and its dynamics from stream `2i+1`.
pub fn run_trajectories<F>(
    model: &Arc<RateModel>,
    params: &ModelParams,
    schedule: &Schedule,
    count: usize,
    src: &RandomSource,
    workers: Option<usize>,
    observers: F,
) -> Result<Vec<ObservationRecord>>
where
    F: Fn() -> Result<Vec<Box<dyn Observer>>> + Sync + Send,
{
    run_indexed(count, workers, |i| {
        let cfg = sample_product_measure(params, &src.stream(2 * i as u64))?;
        let mut state = SimulationState::new(Arc::clone(model), cfg, &src.stream(2 * i as u64 + 1))?;
        let mut obs = observers()?;
        evolve(&mut state, schedule, &mut obs, EvolveOptions::default())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_rate_model, ModelSpec};
    use crate::fields::GammaObserver;
    use crate::localfn::LocalFunction;

    #[test]
    fn results_do_not_depend_on_workers() {
        let model = Arc::new(build_rate_model(&ModelSpec::ssep(), 8).unwrap());
        let params = ModelParams::new(0.5, 8, 1.0).unwrap().with_ring_size(64).unwrap();
        let schedule = Schedule::diffusive(vec![0.5, 1.0], 8).unwrap();
        let src = RandomSource::new(11, 0);
        let obs = || -> Result<Vec<Box<dyn Observer>>> {
            Ok(vec![Box::new(GammaObserver::new("occ", LocalFunction::occupation(0), &params)?)])
        };
        let one = run_trajectories(&model, &params, &schedule, 6, &src, Some(1), obs).unwrap();
        let three = run_trajectories(&model, &params, &schedule, 6, &src, Some(3), obs).unwrap();
        assert_eq!(one, three);
        assert_ne!(one[0].integrals, one[1].integrals);
    }
}
