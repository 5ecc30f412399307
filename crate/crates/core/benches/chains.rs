//! Parallel vs sequential executor on the two hot loops: inner chains of
//! `evaluate_fk` and the outer replicate loop of `risk_eval`.

use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use biasreduce::harness::ExperimentConfig;
use biasreduce::{
    evaluate_fk, harness, ChainKernel, Executor, Functional, InnerMc, NoiseMode, StreamKey, Theta,
};

fn executors() -> Vec<(&'static str, Executor)> {
    let mut v = vec![("sequential", Executor::sequential())];
    let par = Executor::new(0);
    if par.is_parallel() {
        v.push(("parallel", par));
    } else {
        // single-core host or no `parallel` feature: still time a pool
        let forced = Executor::new(4);
        if forced.is_parallel() {
            v.push(("parallel", forced));
        }
    }
    v
}

fn bench_evaluate_fk(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate_fk");
    group.sample_size(10);
    let theta = Theta::standard(3).into_param();
    let f = Functional::trace_quadratic();
    let kernel = ChainKernel::exact().with_noise(NoiseMode::Bartlett);
    let mc = InnerMc::new(2_000);
    for (label, exec) in executors() {
        for k in [1usize, 3] {
            group.bench_with_input(BenchmarkId::new(label, format!("k={k}")), &k, |b, &k| {
                b.iter(|| {
                    evaluate_fk(&f, &theta, k, 50, &kernel, &mc, StreamKey::new(7), &exec).unwrap()
                })
            });
        }
    }
    group.finish();
}

const RISK: &str = r#"
losses = [{ kind = "power", p = 2.0 }, { kind = "psi2" }]
[model]
d = 2
n = 30
a = 2.0
[functional]
kind = "trace_quadratic"
[estimator]
k = 1
noise = "bartlett"
inner_replicates = 50
[experiment]
outer_replicates = 400
seed = 11
"#;

fn bench_risk_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("risk_eval");
    group.sample_size(10);
    let exp = ExperimentConfig::from_toml_str(RISK, Path::new("bench.toml"))
        .unwrap()
        .resolve()
        .unwrap();
    for (label, exec) in executors() {
        group.bench_function(label, |b| {
            b.iter(|| black_box(harness::risk_eval(&exp, &exec).unwrap().bias))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evaluate_fk, bench_risk_eval);
criterion_main!(benches);
