use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qlink_bench::{short_preset, simulator, two_sources};
use qlink_core::budget::herald_stats;
use qlink_core::fock::ModeId;
use qlink_core::Simulator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn budget(c: &mut Criterion) {
    let link = short_preset("420km", 1).link;
    c.bench_function("herald_stats", |b| b.iter(|| herald_stats(black_box(&link)).unwrap()));
}

fn setup(c: &mut Criterion) {
    let s = short_preset("120km", 1);
    // dominated by the readout table build
    let mut g = c.benchmark_group("setup");
    g.sample_size(10);
    g.bench_function("simulator_new", |b| b.iter(|| Simulator::new(black_box(&s)).unwrap()));
    g.finish();
}

fn trials(c: &mut Criterion) {
    let sim = simulator("120km", 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("run_trial", |b| b.iter(|| sim.run_trial(black_box(0.7), &mut rng)));
    let sim = simulator("0km", 4096);
    let mut g = c.benchmark_group("scan");
    g.sample_size(10);
    g.bench_function("fringe_scan_8x4096", |b| b.iter(|| sim.run_fringe_scan()));
    g.bench_function("count_heralds_1e5", |b| b.iter(|| sim.count_heralds(100_000)));
    g.finish();
}

fn fock(c: &mut Criterion) {
    let rho = two_sources(0.06, 3);
    c.bench_function("beam_splitter_4_modes", |b| {
        b.iter(|| rho.beam_splitter(ModeId(1), ModeId(3), 0.5, 0.3).unwrap())
    });
}

criterion_group!(benches, budget, setup, trials, fock);
criterion_main!(benches);
