use criterion::{black_box, criterion_group, criterion_main, Criterion};
use tracefit_bench::karnataka;
use tracefit_core::inference::log_likelihood;
use tracefit_core::kernels::nondimensionalize;
use tracefit_core::mixture::detectee_pmf;
use tracefit_core::simulator::{simulate_tree, SimConfig};
use tracefit_core::{DegreeModel, EpidemicParams, TracingMode};

fn pmf(c: &mut Criterion) {
    let params = EpidemicParams::new(1.5, 0.5, 0.5, 0.6).unwrap();
    let poisson = DegreeModel::poisson(4.0).unwrap();
    c.bench_function("pmf poisson full", |b| {
        b.iter(|| detectee_pmf(black_box(&params), &poisson, TracingMode::Full, None).unwrap())
    });
    let nb = DegreeModel::neg_binomial(0.16, 4.5).unwrap();
    let p3 = nondimensionalize(3.0, 4.5, 0.72).unwrap();
    c.bench_function("pmf negbinom forward", |b| {
        b.iter(|| detectee_pmf(black_box(&p3), &nb, TracingMode::ForwardOnly, None).unwrap())
    });
}

fn likelihood(c: &mut Criterion) {
    let data = karnataka();
    let nb = DegreeModel::neg_binomial(0.16, 4.5).unwrap();
    let p3 = nondimensionalize(3.0, 4.5, 0.72).unwrap();
    c.bench_function("log-likelihood negbinom", |b| {
        b.iter(|| log_likelihood(black_box(&p3), &nb, TracingMode::ForwardOnly, &data).unwrap())
    });
    let pl = DegreeModel::power_law(1.48, 200).unwrap();
    let pp = nondimensionalize(3.0, pl.mean(), 0.74).unwrap();
    c.bench_function("log-likelihood powerlaw", |b| {
        b.iter(|| log_likelihood(black_box(&pp), &pl, TracingMode::ForwardOnly, &data).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let params = EpidemicParams::new(1.5, 0.5, 0.5, 0.6).unwrap();
    let mut config = SimConfig::tree(params, DegreeModel::poisson(4.0).unwrap(), TracingMode::Full, 7);
    config.stop.max_infected_ever = Some(10_000);
    let mut group = c.benchmark_group("simulation");
    group.sample_size(20);
    group.bench_function("tree 1e4 infections", |b| b.iter(|| simulate_tree(black_box(&config)).unwrap()));
    group.finish();
}

criterion_group!(benches, pmf, likelihood, simulation);
criterion_main!(benches);
