//! Sequential versus rayon execution for the bootstrap and the labeling loop.

#[path = "../tests/common/mod.rs"]
mod common;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leavs::eval::{paired_bootstrap, BinaryScorer, BootstrapConfig, Metric, Stratum, TauScorer};
use leavs::exec::Execution;
use leavs::schema::Organ;
use rand::Rng;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut out = vec![("sequential", Execution::Sequential)];
    if cfg!(feature = "parallel") {
        out.push(("parallel", Execution::Parallel { threads: 0 }));
    }
    out
}

fn bootstrap(c: &mut Criterion) {
    let mut rng = common::seeded(3);
    let n = 500;
    let gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let a: Vec<bool> = gt.iter().map(|&g| if rng.random_bool(0.1) { !g } else { g }).collect();
    let b: Vec<bool> = gt.iter().map(|&g| if rng.random_bool(0.2) { !g } else { g }).collect();
    let binary = [Stratum::new(a, b, gt)];

    let grade = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect() };
    let tau = [Stratum::new(grade(&mut rng), grade(&mut rng), grade(&mut rng))];

    let mut group = c.benchmark_group("paired_bootstrap");
    group.sample_size(10);
    for (name, execution) in modes() {
        let cfg = BootstrapConfig { n_iter: 1000, seed: 1, execution };
        group.bench_with_input(BenchmarkId::new("f1", name), &cfg, |bch, cfg| {
            bch.iter(|| paired_bootstrap(&BinaryScorer(Metric::F1), black_box(&binary), cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("tau", name), &cfg, |bch, cfg| {
            bch.iter(|| paired_bootstrap(&TauScorer, black_box(&tau), cfg).unwrap())
        });
    }
    group.finish();
}

fn labeling(c: &mut Criterion) {
    let reports = common::corpus(40, 5);
    let scenario = common::clean_scenario(&reports, &Organ::ALL, 50);

    let mut group = c.benchmark_group("run_corpus");
    group.sample_size(10);
    for (name, parallelism) in [("sequential", 1), ("parallel", 8)] {
        if parallelism > 1 && !cfg!(feature = "parallel") {
            continue;
        }
        let labeler = common::scripted_labeler(&reports, &Organ::ALL, &scenario, &common::config(parallelism, &[]));
        group.bench_function(name, |bch| bch.iter(|| labeler.run_corpus(black_box(&reports), None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bootstrap, labeling);
criterion_main!(benches);
