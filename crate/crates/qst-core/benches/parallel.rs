//! Data-parallel kernels against their sequential twins.
//!
//! Built with the default `parallel` feature, the first series in each
//! group fans out across the rayon pool while the `sequential` series
//! pins the single-threaded path; without the feature both series run
//! sequentially and should tie.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tempfile::TempDir;

use qst_core::dataset;
use qst_core::measurement::{
    husimi_q, husimi_q_seq, sensing_matrix, sensing_matrix_seq, GridGeometry,
};
use qst_core::states::{thermal_state, Family};

/// Dense mixed state: every Hilbert-space dimension contributes, so the
/// per-grid-point work is the worst case.
fn dense_state() -> qst_core::hilbert::DensityMatrix {
    thermal_state(2.0, 32).expect("thermal state")
}

fn bench_husimi(c: &mut Criterion) {
    let geometry = GridGeometry::standard();
    let rho = dense_state();
    let mut group = c.benchmark_group("husimi_grid");
    group.bench_with_input(BenchmarkId::new("parallel", "32x32"), &rho, |b, rho| {
        b.iter(|| husimi_q(rho, &geometry).unwrap())
    });
    group.bench_with_input(BenchmarkId::new("sequential", "32x32"), &rho, |b, rho| {
        b.iter(|| husimi_q_seq(rho, &geometry).unwrap())
    });
    group.finish();
}

fn bench_sensing(c: &mut Criterion) {
    let geometry = GridGeometry::standard();
    let mut group = c.benchmark_group("sensing_matrix");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", "1024x1024"), |b| {
        b.iter(|| sensing_matrix(&geometry, 32).unwrap())
    });
    group.bench_function(BenchmarkId::new("sequential", "1024x1024"), |b| {
        b.iter(|| sensing_matrix_seq(&geometry, 32).unwrap())
    });
    group.finish();
}

fn bench_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("dataset_generation");
    group.sample_size(10);
    // One record per family; generation fans out across records.
    group.bench_function(BenchmarkId::new("generate", "7-records"), |b| {
        b.iter(|| {
            let dir = TempDir::new().unwrap();
            dataset::generate(7, 1, &Family::ALL, None, dir.path()).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_husimi, bench_sensing, bench_generation);
criterion_main!(benches);
