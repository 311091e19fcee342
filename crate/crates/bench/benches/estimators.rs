use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sitr_bench::fixture;
use sitr_core::{
    local_linear_binary, neighbor_weights, score_efficient_multi, score_method1, solve_index, FStar, Method, ScenarioId,
};
use std::hint::black_box;

fn kernel_weights(c: &mut Criterion) {
    let (data, kernel) = fixture(ScenarioId::S1, 1000);
    let t = data.index_values(&[1.0, -1.0]);
    c.bench_function("neighbor_weights/n1000", |b| b.iter(|| neighbor_weights(black_box(&t), 0.1, &kernel)));
}

fn local_fit(c: &mut Criterion) {
    let (data, kernel) = fixture(ScenarioId::S1, 1000);
    let spec = ScenarioId::S1.truth().spec;
    c.bench_function("local_linear_binary/n1000", |b| {
        b.iter(|| local_linear_binary(&data, &spec, &[1.0, -1.0], black_box(&[0.3, 0.1]), &FStar::zero(), &kernel))
    });
}

fn scores(c: &mut Criterion) {
    let mut group = c.benchmark_group("score");
    for n in [300, 600] {
        let (data, kernel) = fixture(ScenarioId::S1, n);
        let spec = ScenarioId::S1.truth().spec;
        group.bench_with_input(BenchmarkId::new("method1", n), &n, |b, _| {
            b.iter(|| score_method1(&data, &spec, black_box(&[1.0, -0.9]), &FStar::zero(), &kernel))
        });
        let (dose, dose_kernel) = fixture(ScenarioId::S6, n);
        let dose_spec = ScenarioId::S6.truth().spec;
        group.bench_with_input(BenchmarkId::new("efficient_dose", n), &n, |b, _| {
            b.iter(|| {
                score_efficient_multi(&dose, &dose_spec, black_box(&[1.0, -0.9]), &FStar::zero(), 2, dose_spec.kind(), &dose_kernel)
            })
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_index");
    group.sample_size(10);
    for (id, method) in [(ScenarioId::S1, Method::M1), (ScenarioId::S1, Method::M4), (ScenarioId::S5, Method::CatEff)] {
        let (data, kernel) = fixture(id, 600);
        let spec = id.truth().spec;
        group.bench_function(format!("{}/{method:?}", id.name()), |b| {
            b.iter(|| solve_index(&data, &spec, method, &kernel, None))
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_weights, local_fit, scores, solve);
criterion_main!(benches);
