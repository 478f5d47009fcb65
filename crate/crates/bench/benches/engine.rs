use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use wres_bench::cyclic_word;
use wres_core::invariant_forms::compare_with_reference;
use wres_core::*;

fn traces(c: &mut Criterion) {
    let mut g = c.benchmark_group("trace_word");
    for len in [4, 6, 8] {
        let w = cyclic_word(len, 6);
        g.bench_with_input(BenchmarkId::from_parameter(len), &w, |b, w| b.iter(|| trace_word(black_box(w), 6).unwrap()));
    }
    g.finish();
}

fn densities(c: &mut Criterion) {
    let mut g = c.benchmark_group("residue_density");
    g.sample_size(10);
    for n in [4, 6, 8] {
        g.bench_with_input(BenchmarkId::new("part_i", n), &n, |b, &n| {
            b.iter(|| residue_density(&PartSpec::of(Part::I), n).unwrap())
        });
    }
    g.bench_function("cocycle_6", |b| b.iter(|| cocycle_density(6).unwrap()));
    g.finish();
}

fn decomposition(c: &mut Criterion) {
    let d = cocycle_density(6).unwrap();
    let mut g = c.benchmark_group("invariants");
    g.sample_size(10);
    g.bench_function("jets_to_invariants_cocycle_6", |b| b.iter(|| jets_to_invariants(black_box(&d), &[]).unwrap()));
    g.bench_function("compare_cocycle_6", |b| b.iter(|| compare_with_reference(black_box(&d), Target::Cocycle).unwrap()));
    g.finish();
}

criterion_group!(benches, traces, densities, decomposition);
criterion_main!(benches);
