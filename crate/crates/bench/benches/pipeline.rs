use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use homotomo::estimator::{self, ReconstructionSettings};
use homotomo::info::{self, FidelityLossModel, LossDistribution};
use homotomo::protocol::{build_protocol, Statistics};
use homotomo::sampler::{run_protocol_simulation, RunSeed};
use homotomo_bench::{fig2_basis, fig2_spec, fig2_truth};

fn protocol_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_protocol");
    for (name, stats, eta) in [
        ("full_ideal", Statistics::Full, 1.0),
        ("full_eta07", Statistics::Full, 0.7),
        ("difference_eta07", Statistics::Difference, 0.7),
    ] {
        let spec = fig2_spec(stats, eta);
        let basis = [fig2_basis(3)];
        group.bench_function(name, |b| b.iter(|| build_protocol(&spec, &basis).unwrap()));
    }
    group.finish();
}

fn information(c: &mut Criterion) {
    let mut group = c.benchmark_group("information_matrix");
    for s in [3, 6, 10] {
        let protocol = build_protocol(&fig2_spec(Statistics::Full, 1.0), &[fig2_basis(s)]).unwrap();
        let truth = fig2_truth(s);
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, _| {
            b.iter(|| info::information_matrix(&truth, &protocol).unwrap())
        });
    }
    group.finish();
}

fn reconstruction(c: &mut Criterion) {
    let protocol = build_protocol(&fig2_spec(Statistics::Full, 1.0), &[fig2_basis(3)]).unwrap();
    let truth = fig2_truth(3);
    let counts = run_protocol_simulation(&protocol, truth.matrix(), RunSeed::new(1, 0)).unwrap();
    let settings = ReconstructionSettings::default();
    c.bench_function("ml_fixed_point_s3", |b| {
        b.iter(|| estimator::ml_fixed_point(&counts, &protocol, &settings, &truth).unwrap())
    });
    c.bench_function("simulate_fig2", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            run_protocol_simulation(&protocol, truth.matrix(), RunSeed::new(1, i)).unwrap()
        })
    });
}

fn loss_cdf(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_cdf");
    for nu in [1usize, 2, 4, 16] {
        let d: Vec<f64> = (0..nu).map(|j| 1e-4 * (1.0 + j as f64)).collect();
        let dist = LossDistribution::new(FidelityLossModel::new(d).unwrap());
        let x = dist.mean();
        group.bench_with_input(BenchmarkId::from_parameter(nu), &nu, |b, _| {
            b.iter(|| dist.cdf(x))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    protocol_build,
    information,
    reconstruction,
    loss_cdf
);
criterion_main!(benches);
