use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cosim_core::dse::{sweep, Execution, ExperimentConfig, Harness};

fn configs() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for battery in ["stock", "ufx", "cyclone", "lipol"] {
        for v in [1.0, 1.5] {
            out.push(ExperimentConfig::new(&format!("{battery}-{v}"), "easy", battery, v));
        }
    }
    out
}

fn bench_sweep(c: &mut Criterion) {
    let h = Harness::bundled();
    let configs = configs();
    let mut group = c.benchmark_group("easy_sweep_8_runs");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(sweep(&h, &configs, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
