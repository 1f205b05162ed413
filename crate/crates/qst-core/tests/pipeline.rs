//! The full data path exercised through the public API: generate a dataset on
//! disk, load it back, and recover the stored states from their Husimi grids
//! with each classical estimator.

use std::sync::OnceLock;

use qst_core::dataset::{self, DatasetRecord, Manifest};
use qst_core::hilbert::fidelity;
use qst_core::measurement::{GridGeometry, HusimiGrid};
use qst_core::nn::OptimConfig;
use qst_core::recon::{gd_reconstruct, linear_inversion, mle_iterative, Parameterization};
use qst_core::states::Family;
use tempfile::TempDir;

struct Fixture {
    _dir: TempDir,
    records: Vec<DatasetRecord>,
    manifest: Manifest,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

/// Two records per family, written to disk once and shared by every test.
fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let manifest =
            dataset::generate(2 * Family::ALL.len(), 40, &Family::ALL, None, dir.path()).unwrap();
        let (records, loaded) = dataset::load(dir.path()).unwrap();
        assert_eq!(manifest, loaded);
        Fixture { _dir: dir, records, manifest }
    })
}

fn grid_of(record: &DatasetRecord) -> HusimiGrid {
    let geom = GridGeometry::new(fixture().manifest.grid_side, fixture().manifest.grid_extent)
        .unwrap();
    HusimiGrid::new(geom, record.husimi.clone()).unwrap()
}

#[test]
fn generated_records_pass_validation_and_cover_every_class() {
    let fx = fixture();
    assert_eq!(fx.records.len(), 2 * Family::ALL.len());
    for (index, record) in fx.records.iter().enumerate() {
        record.validate().unwrap();
        // Round-robin layout: record i belongs to class i mod |classes|.
        assert_eq!(record.label as usize, index % Family::ALL.len());
    }
    assert_eq!(fx.manifest.class_counts, vec![2; Family::ALL.len()]);
}

#[test]
fn regenerating_a_record_by_index_reproduces_the_stored_one() {
    let fx = fixture();
    for index in [0, 3, 6] {
        let fresh = dataset::regenerate_record(&fx.manifest, index).unwrap();
        let stored = &fx.records[index];
        assert_eq!(fresh.label, stored.label);
        assert_eq!(fresh.features, stored.features);
        assert_eq!(fresh.husimi, stored.husimi);
        assert!(fidelity(&fresh.rho, &stored.rho).unwrap() > 1.0 - 1e-12);
    }
}

#[test]
fn mle_recovers_each_stored_state_from_its_grid() {
    for record in &fixture().records[..Family::ALL.len()] {
        let grid = grid_of(record);
        let result = mle_iterative(&grid, record.rho.dim(), 120, 0.2, Some(&record.rho)).unwrap();
        let fidelity = result.fidelity_vs_truth.unwrap();
        assert!(
            fidelity > 0.95,
            "label {} reached only {fidelity}",
            record.label
        );
    }
}

#[test]
fn linear_inversion_recovers_a_cat_state() {
    let record = &fixture().records[Family::Cat.label() as usize];
    let grid = grid_of(record);
    let result = linear_inversion(&grid, record.rho.dim(), 1e-6, Some(&record.rho)).unwrap();
    assert!(result.fidelity_vs_truth.unwrap() > 0.95);
}

#[test]
fn gradient_descent_recovers_a_coherent_state_with_both_parameterizations() {
    let record = &fixture().records[Family::Coherent.label() as usize];
    let grid = grid_of(record);
    let config = OptimConfig {
        learning_rate: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        iterations: 800,
        seed: 1,
    };
    for kind in [Parameterization::Cholesky, Parameterization::Split] {
        let result = gd_reconstruct(&grid, record.rho.dim(), kind, &config, Some(&record.rho))
            .unwrap();
        let fidelity = result.fidelity_vs_truth.unwrap();
        assert!(fidelity > 0.98, "{} reached only {fidelity}", kind.name());
        // The recorded loss history matches the iteration budget and the
        // reported final loss.
        assert_eq!(result.loss_history.len(), config.iterations + 1);
        assert_eq!(*result.loss_history.last().unwrap(), result.final_loss);
    }
}

#[test]
fn a_deterministic_split_partitions_the_records() {
    let fx = fixture();
    let (train, val) = dataset::split(&fx.manifest, (0.7, 0.3), 9).unwrap();
    let (train2, val2) = dataset::split(&fx.manifest, (0.7, 0.3), 9).unwrap();
    assert_eq!(train, train2);
    assert_eq!(val, val2);
    assert_eq!(train.len() + val.len(), fx.records.len());
    let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
    all.sort_unstable();
    let expect: Vec<usize> = (0..fx.records.len()).collect();
    assert_eq!(all, expect);
}
