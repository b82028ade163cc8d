use criterion::{criterion_group, criterion_main, Criterion};
use fluctuant_core::spectral::{build_sector_generator, h_minus_one, spectral_gap, FiniteSector};
use fluctuant_core::{build_rate_model, Correction, LocalFunction, ModelSpec};

fn sector_gap(c: &mut Criterion) {
    let model = build_rate_model(
        &ModelSpec::SpeedChange {
            b: Some(0.5),
            base: Some(1.0),
            rate_table: None,
            epsilon0: Some(0.5),
        },
        1,
    )
    .unwrap();
    let mut group = c.benchmark_group("spectral");
    group.sample_size(10);
    for (ell, k) in [(8usize, 4usize), (10, 5), (14, 7)] {
        let sector = FiniteSector::interval(ell, k).unwrap();
        group.bench_function(format!("gap_{ell}_{k}"), |b| {
            b.iter(|| spectral_gap(&build_sector_generator(&model, &sector).unwrap()).unwrap())
        });
    }
    let sector = FiniteSector::ring(12, 6).unwrap();
    let g = build_sector_generator(&model, &sector).unwrap();
    let f = sector.local_function(&"[[1],1.0],[[2],-1.0]".parse::<LocalFunction>().unwrap()).unwrap();
    group.bench_function("h_minus_one_12_6", |b| b.iter(|| h_minus_one(&g, &f).unwrap()));
    group.finish();
}

fn psi(c: &mut Criterion) {
    let f = LocalFunction::monomial(&[1, 2, 3]);
    let mut group = c.benchmark_group("localfn");
    group.bench_function("psi_variance_1024", |b| b.iter(|| f.psi_variance(1024, 0.3).unwrap()));
    group.bench_function("residual_1024", |b| b.iter(|| f.ensembles_residual(1024, Correction::Add).unwrap()));
    group.bench_function("residual_exact_64", |b| b.iter(|| f.ensembles_residual_exact(64, Correction::Add).unwrap()));
    group.finish();
}

criterion_group!(benches, sector_gap, psi);
criterion_main!(benches);
