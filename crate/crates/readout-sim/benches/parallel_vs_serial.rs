//! Compares the rayon-backed shard map against a plain sequential loop on the
//! two hot Monte Carlo workloads: circuit-shot ensembles and dipole-emission
//! collection sampling. Both paths draw identical per-index seeds, so the
//! outputs are bit-identical and only the scheduling differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use readout_sim::circuit::{simulate_shot, ReadoutErrorModel};
use readout_sim::emission::{collection_efficiency, CollectionGeometry, EmissionCase};
use readout_sim::par;
use readout_sim::spam::three_image_circuit;

fn bench_circuit_shots(c: &mut Criterion) {
    let circuit = three_image_circuit();
    let model = ReadoutErrorModel::paper_averaged();
    let mut group = c.benchmark_group("circuit_shots");
    for &n in &[1_000usize, 10_000] {
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| {
                par::map_indexed(n, |i| {
                    simulate_shot(&circuit, &model, par::derive_seed(7, i as u64)).unwrap()
                })
            })
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &n, |b, &n| {
            b.iter(|| {
                par::map_indexed_serial(n, |i| {
                    simulate_shot(&circuit, &model, par::derive_seed(7, i as u64)).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_collection(c: &mut Criterion) {
    let mut group = c.benchmark_group("collection_efficiency");
    group.sample_size(20);
    let geo = CollectionGeometry {
        numerical_aperture: 0.6,
        sample_count: 1_000_000,
    };
    // collection_efficiency itself goes through par::map_indexed, so this
    // entry reflects whichever path the `parallel` feature selected
    group.bench_function("feature_selected", |b| {
        b.iter(|| collection_efficiency(&geo, EmissionCase::MinusThreeHalf, 11))
    });
    group.finish();
}

criterion_group!(benches, bench_circuit_shots, bench_collection);
criterion_main!(benches);
