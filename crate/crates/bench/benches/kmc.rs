use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fluctuant_bench::state;
use fluctuant_core::dynamics::{evolve, EvolveOptions, ModelSpec, Schedule};
use fluctuant_core::fields::{GammaObserver, Observer};
use fluctuant_core::{LocalFunction, ModelParams};

fn kmc(c: &mut Criterion) {
    let models = [
        ("ssep", ModelSpec::ssep()),
        (
            "speed_change",
            ModelSpec::SpeedChange {
                b: Some(0.5),
                base: Some(1.0),
                rate_table: None,
                epsilon0: Some(0.5),
            },
        ),
        ("wasep", ModelSpec::Wasep { a: 1.0, gamma: 0.5 }),
    ];
    let mut group = c.benchmark_group("kmc");
    // about 10⁴ events per iteration on 1024 sites at ρ = ½
    let horizon = 20.0;
    for (name, spec) in models {
        group.throughput(Throughput::Elements(10_000));
        group.bench_function(name, |b| {
            b.iter_batched(
                || state(&spec, 1024, 0.5, 7),
                |mut s| {
                    let schedule = Schedule::new(vec![horizon], 1.0).unwrap();
                    evolve(&mut s, &schedule, &mut [], EvolveOptions::default()).unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
    let params = ModelParams::new(0.5, 64, 1.0).unwrap().with_ring_size(1024).unwrap();
    group.bench_function("ssep_with_gamma", |b| {
        b.iter_batched(
            || state(&ModelSpec::ssep(), 1024, 0.5, 7),
            |mut s| {
                let schedule = Schedule::new(vec![horizon], 1.0).unwrap();
                let mut obs: Vec<Box<dyn Observer>> =
                    vec![Box::new(GammaObserver::new("g", LocalFunction::monomial(&[0, 1]), &params).unwrap())];
                evolve(&mut s, &schedule, &mut obs, EvolveOptions::default()).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, kmc);
criterion_main!(benches);
