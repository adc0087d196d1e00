use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spncs::bounds::{interconnection_constants, slow_jump_lambdas, InterconnectionInputs};
use spncs::exec::Exec;
use spncs::model::SystemModel;
use spncs::presets;
use spncs::protocols::Channels;

fn sampled_constants(c: &mut Criterion) {
    let m = SystemModel::new(presets::example_plant(), presets::reference_gains()).unwrap();
    let ch = Channels::zeroing(&m.plant);
    let pf = presets::published_pf();
    let ps = presets::published_ps();
    let samples = 100_000;

    let mut group = c.benchmark_group("slow_jump_lambdas");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| slow_jump_lambdas(&m, &pf, &ch.slow, black_box(samples), 0, 1, exec).unwrap())
        });
    }
    group.finish();

    let inputs = InterconnectionInputs {
        model: &m,
        ps: &ps,
        pf: &pf,
        gamma_s: presets::PUBLISHED_GAMMA_S,
        gamma_f: presets::PUBLISHED_GAMMA_F,
        lambda_s_star: presets::LAMBDA_S_STAR,
        lambda_f_star: presets::LAMBDA_F_STAR,
        slow: &ch.slow,
        fast: &ch.fast,
    };
    let mut group = c.benchmark_group("interconnection_constants");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| interconnection_constants(&inputs, black_box(samples), 0, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sampled_constants);
criterion_main!(benches);
