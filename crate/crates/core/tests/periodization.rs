use std::sync::Arc;

use fluctuant_core::ensemble::run_trajectories;
use fluctuant_core::fields::GammaObserver;
use fluctuant_core::stats::summarize;
use fluctuant_core::{build_rate_model, LocalFunction, ModelParams, ModelSpec, Observer, RandomSource, Result, Schedule};

fn occupation_variance(ring: usize, seed: u64) -> (f64, f64) {
    let n = 8;
    let model = Arc::new(build_rate_model(&ModelSpec::ssep(), n).unwrap());
    let params = ModelParams::new(0.5, n, 1.0).unwrap().with_ring_size(ring).unwrap();
    let schedule = Schedule::diffusive(vec![1.0], n).unwrap();
    let obs = || -> Result<Vec<Box<dyn Observer>>> {
        Ok(vec![Box::new(GammaObserver::new("occ", LocalFunction::occupation(0), &params)?)])
    };
    let records = run_trajectories(&model, &params, &schedule, 3000, &RandomSource::new(seed, 0), None, obs).unwrap();
    let samples: Vec<Vec<f64>> = records.iter().map(|r| r.series("occ").unwrap().to_vec()).collect();
    let s = summarize(&samples).unwrap();
    let (lo, hi) = s.variance_ci[0];
    (s.variance[0], (hi - lo) / (2.0 * 1.96))
}

// Doubling the ring must not move the statistics beyond their intervals.
#[test]
fn ring_doubling_leaves_occupation_variance_unchanged() {
    let (a, sa) = occupation_variance(128, 21);
    let (b, sb) = occupation_variance(256, 22);
    assert!((a - b).abs() < 3.5 * (sa * sa + sb * sb).sqrt(), "ring 128: {a} ± {sa}, ring 256: {b} ± {sb}");
}
