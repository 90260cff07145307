use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prbt_core::certify::CertifyOptions;
use prbt_core::pipeline::{compute_prbt, monte_carlo_validate, Params};
use prbt_core::Model;

fn model(name: &str) -> Model {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "models", name].iter().collect();
    Model::load(&p).unwrap()
}

fn params(parallel: bool) -> Params {
    Params {
        theta0: 0.5,
        opts: CertifyOptions { degrees: vec![3, 4], ..CertifyOptions::default() },
        parallel,
        ..Params::default()
    }
}

fn tubes(c: &mut Criterion) {
    let m = model("lotka_volterra.json");
    let mut g = c.benchmark_group("lotka_volterra_3_tubes");
    g.sample_size(10);
    for parallel in [false, true] {
        let id = if parallel { "rayon" } else { "sequential" };
        g.bench_with_input(BenchmarkId::from_parameter(id), &parallel, |b, &par| {
            b.iter(|| compute_prbt(&m, 3, &params(par)).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let m = model("lotka_volterra.json");
    let prbt = compute_prbt(&m, 3, &params(true)).unwrap();
    let mut g = c.benchmark_group("lotka_volterra_mc_200");
    g.sample_size(10);
    for parallel in [false, true] {
        let id = if parallel { "rayon" } else { "sequential" };
        g.bench_with_input(BenchmarkId::from_parameter(id), &parallel, |b, &par| {
            b.iter(|| monte_carlo_validate(&m, &prbt.segments, 200, 1, 0.05, par).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, tubes, monte_carlo);
criterion_main!(benches);
