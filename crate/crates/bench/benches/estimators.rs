use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emshap::shapley::{
    emshap_attribute, exact_shapley, kernel_shap, sampling_shap, BackgroundPolicy, EmShapOptions, MarginalOracle,
};
use emshap::trainer::EmShapModel;
use emshap_bench::{linear_model, rng, uniform_rows};
use std::hint::black_box;

fn exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_shapley");
    for d in [4, 8, 12] {
        let model = linear_model(d);
        let bg = uniform_rows(16, d, 1);
        let x = uniform_rows(1, d, 2).remove(0);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| exact_shapley(&MarginalOracle::new(&model, &bg, &x).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn sampled(c: &mut Criterion) {
    let d = 8;
    let model = linear_model(d);
    let bg = uniform_rows(32, d, 3);
    let x = uniform_rows(1, d, 4).remove(0);
    c.bench_function("sampling_shap/d8/500perm", |b| {
        let mut r = rng(5);
        b.iter(|| sampling_shap(&model, &bg, black_box(&x), 500, BackgroundPolicy::RandomRow, &mut r).unwrap())
    });
    c.bench_function("kernel_shap/d8/full", |b| {
        let mut r = rng(6);
        b.iter(|| kernel_shap(&model, &bg, black_box(&x), 1 << d, &mut r).unwrap())
    });
}

fn emshap(c: &mut Criterion) {
    let d = 4;
    let model = linear_model(d);
    let em = EmShapModel::new(d, 8, 16, &mut rng(7));
    let x = uniform_rows(1, d, 8).remove(0);
    let opts = EmShapOptions { k: 100, permutations: 0 };
    c.bench_function("emshap_attribute/d4/k100", |b| {
        let mut r = rng(9);
        b.iter(|| emshap_attribute(&model, &em, black_box(&x), &opts, &mut r).unwrap())
    });
}

criterion_group!(benches, exact, sampled, emshap);
criterion_main!(benches);
