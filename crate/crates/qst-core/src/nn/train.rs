//! Deterministic single-threaded training loops for the two networks.
//!
//! Each epoch shuffles the sample order with a rng derived from the run
//! seed and the epoch index, then walks fixed-size batches (a short final
//! batch is kept). The same rng drives the stochastic layers, so a rerun
//! with one seed reproduces every loss bit for bit.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hilbert::{fidelity, ComplexMatrix, DensityMatrix};
use crate::measurement::GridGeometry;
use crate::nn::adam::{AdamState, OptimConfig};
use crate::nn::checkpoint::{save_checkpoint, Checkpoint};
use crate::nn::msnn::{msnn_loss, MsModel, SensingTables, SplitMasks, MSNN_ALPHA};
use crate::nn::rfb::{reconstruct_from_output, rfb_loss, RfbModel};
use crate::nn::tape::{Tape, Tensor};
use crate::recon::project_to_physical;
use crate::states::CoefficientTable;

/// Husimi grid side expected by both architectures.
const SIDE: usize = 32;
const GRID_LEN: usize = SIDE * SIDE;

/// One labeled example for the classifier-regressor: a peak-normalized grid,
/// the family index, the feature targets, and the true state for scoring.
#[derive(Debug, Clone)]
pub struct RfbSample {
    pub grid: Vec<f64>,
    pub label: usize,
    pub features: [f64; 6],
    pub truth: DensityMatrix,
}

/// One example for the measurement-supervised network: the normalized grid
/// fed to the net, the raw grid the predictions must match, the family
/// index, and the true state.
#[derive(Debug, Clone)]
pub struct MsSample {
    pub grid_norm: Vec<f64>,
    pub grid_raw: Vec<f64>,
    pub label: usize,
    pub truth: DensityMatrix,
}

/// Loop controls shared by both training entry points. The optimizer's
/// iteration count is the epoch count.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub batch_size: usize,
    /// Save a checkpoint every this many epochs; zero disables saving.
    pub checkpoint_stride: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Mean epoch losses above this abort the run as divergent.
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            batch_size: 32,
            checkpoint_stride: 0,
            checkpoint_dir: None,
            divergence_limit: 1e8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                value: 0.0,
                expected: "at least 1",
            });
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::InvalidParameter {
                name: "divergence_limit",
                value: self.divergence_limit,
                expected: "strictly positive",
            });
        }
        Ok(())
    }
}

/// Mean batch loss of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Per-epoch losses plus the best epoch seen.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    // Golden-ratio stride keeps per-epoch streams disjoint for any seed.
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn check_grid(len: usize, what: &'static str) -> Result<()> {
    if len != GRID_LEN {
        return Err(Error::ShapeMismatch {
            primitive: what,
            detail: format!("grid holds {len} values, expected {GRID_LEN}"),
        });
    }
    Ok(())
}

fn guard_divergence(epoch: usize, loss: f64, limit: f64) -> Result<()> {
    if !loss.is_finite() || loss > limit {
        return Err(Error::Divergence { iteration: epoch, loss });
    }
    Ok(())
}

fn maybe_checkpoint(
    config: &TrainConfig,
    epoch: usize,
    name: &str,
    checkpoint: Checkpoint,
) -> Result<()> {
    if config.checkpoint_stride == 0 || epoch % config.checkpoint_stride != 0 {
        return Ok(());
    }
    if let Some(dir) = &config.checkpoint_dir {
        save_checkpoint(&dir.join(format!("{name}-epoch{epoch:04}.qstnn")), &checkpoint)?;
    }
    Ok(())
}

fn finish_report(epochs: Vec<EpochStats>) -> TrainReport {
    let (best_epoch, best_loss) = epochs
        .iter()
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
        .map(|s| (s.epoch, s.mean_loss))
        .unwrap_or((0, f64::NAN));
    TrainReport { epochs, best_epoch, best_loss }
}

/// Trains the classifier-regressor in place and reports per-epoch losses.
pub fn train_rfb(
    model: &mut RfbModel,
    samples: &[RfbSample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_rfb_with(model, samples, config, &mut |_, _| Ok(()))
}

/// [`train_rfb`] with an observer called after each epoch's updates and
/// checkpoint write. Observer errors abort the run.
pub fn train_rfb_with(
    model: &mut RfbModel,
    samples: &[RfbSample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &RfbModel) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty training set"));
    }
    for s in samples {
        check_grid(s.grid.len(), "train_rfb")?;
    }
    let mut adam = AdamState::new(model.params());
    let mut epochs = Vec::with_capacity(config.optim.iterations);
    for epoch in 1..=config.optim.iterations {
        let mut rng = epoch_rng(config.optim.seed, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut grid = Vec::with_capacity(b * GRID_LEN);
            let mut truth = Vec::with_capacity(b * 6);
            let mut labels = Vec::with_capacity(b);
            for &idx in chunk {
                grid.extend_from_slice(&samples[idx].grid);
                truth.extend_from_slice(&samples[idx].features);
                labels.push(samples[idx].label);
            }
            let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
            let truth = Tensor::new(vec![b, 6], truth)?;

            let mut tape = Tape::new(true);
            let out = model.forward(&mut tape, &input, &mut rng)?;
            let truth_node = tape.leaf(&truth);
            let loss = rfb_loss(&mut tape, &out, &labels, truth_node)?;
            let value = tape.value(loss)[0];
            guard_divergence(epoch, value, config.divergence_limit)?;
            let grads = tape.backward(loss)?;
            let grad_vecs: Vec<Vec<f64>> =
                out.param_ids.iter().map(|&id| grads.get(id).to_vec()).collect();
            adam.step(model.params_mut(), &grad_vecs, &config.optim)?;
            loss_sum += value;
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f64;
        guard_divergence(epoch, mean_loss, config.divergence_limit)?;
        epochs.push(EpochStats { epoch, mean_loss });
        maybe_checkpoint(config, epoch, "rfb", Checkpoint::from_rfb(model))?;
        on_epoch(epoch, model)?;
    }
    Ok(finish_report(epochs))
}

/// Trains the measurement-supervised network in place.
pub fn train_msnn(
    model: &mut MsModel,
    samples: &[MsSample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_msnn_with(model, samples, config, &mut |_, _| Ok(()))
}

/// [`train_msnn`] with an observer called after each epoch's updates and
/// checkpoint write. The model is handed back mutably because inference
/// needs it so. Observer errors abort the run.
pub fn train_msnn_with(
    model: &mut MsModel,
    samples: &[MsSample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &mut MsModel) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty training set"));
    }
    let dim = samples[0].truth.dim();
    for s in samples {
        check_grid(s.grid_norm.len(), "train_msnn")?;
        check_grid(s.grid_raw.len(), "train_msnn")?;
        if s.truth.dim() != dim {
            return Err(Error::DimensionMismatch(s.truth.dim(), dim));
        }
    }
    let tables = SensingTables::new(&GridGeometry::standard(), dim)?;
    let masks = SplitMasks::new(dim);

    let mut adam = AdamState::new(model.params());
    let mut epochs = Vec::with_capacity(config.optim.iterations);
    for epoch in 1..=config.optim.iterations {
        let mut rng = epoch_rng(config.optim.seed, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut grid = Vec::with_capacity(b * GRID_LEN);
            let mut raw = Vec::with_capacity(b * GRID_LEN);
            let mut labels = Vec::with_capacity(b);
            let mut truths = Vec::with_capacity(b);
            for &idx in chunk {
                grid.extend_from_slice(&samples[idx].grid_norm);
                raw.extend_from_slice(&samples[idx].grid_raw);
                labels.push(samples[idx].label);
                truths.push(samples[idx].truth.clone());
            }
            let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
            let raw = Tensor::new(vec![b, GRID_LEN], raw)?;

            let mut tape = Tape::new(true);
            let out = model.forward(&mut tape, &input, &labels)?;
            let loss = msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, MSNN_ALPHA)?;
            let value = tape.value(loss)[0];
            guard_divergence(epoch, value, config.divergence_limit)?;
            let grads = tape.backward(loss)?;
            let grad_vecs: Vec<Vec<f64>> =
                out.param_ids.iter().map(|&id| grads.get(id).to_vec()).collect();
            adam.step(model.params_mut(), &grad_vecs, &config.optim)?;
            loss_sum += value;
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f64;
        guard_divergence(epoch, mean_loss, config.divergence_limit)?;
        epochs.push(EpochStats { epoch, mean_loss });
        maybe_checkpoint(config, epoch, "msnn", Checkpoint::from_msnn(model))?;
        on_epoch(epoch, model)?;
    }
    Ok(finish_report(epochs))
}

/// Mean eval-mode classifier-regressor loss over a sample set, weighted by
/// batch size. The stochastic layers are disabled, so the value depends only
/// on the parameters.
pub fn rfb_validation_loss(
    model: &RfbModel,
    samples: &[RfbSample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_size",
            value: 0.0,
            expected: "at least 1",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss_sum = 0.0;
    for block in samples.chunks(batch_size) {
        let b = block.len();
        let mut grid = Vec::with_capacity(b * GRID_LEN);
        let mut truth = Vec::with_capacity(b * 6);
        let mut labels = Vec::with_capacity(b);
        for s in block {
            check_grid(s.grid.len(), "rfb_validation_loss")?;
            grid.extend_from_slice(&s.grid);
            truth.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
        let truth = Tensor::new(vec![b, 6], truth)?;
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &input, &mut rng)?;
        let truth_node = tape.leaf(&truth);
        let loss = rfb_loss(&mut tape, &out, &labels, truth_node)?;
        loss_sum += tape.value(loss)[0] * b as f64;
    }
    Ok(loss_sum / samples.len() as f64)
}

/// Mean eval-mode measurement-supervised loss over a sample set, weighted
/// by batch size. Batch norm runs on its accumulated statistics, so the
/// value depends only on the parameters and those statistics.
pub fn msnn_validation_loss(
    model: &mut MsModel,
    samples: &[MsSample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_size",
            value: 0.0,
            expected: "at least 1",
        });
    }
    let dim = samples[0].truth.dim();
    let tables = SensingTables::new(&GridGeometry::standard(), dim)?;
    let masks = SplitMasks::new(dim);
    let mut loss_sum = 0.0;
    for block in samples.chunks(batch_size) {
        let b = block.len();
        let mut grid = Vec::with_capacity(b * GRID_LEN);
        let mut raw = Vec::with_capacity(b * GRID_LEN);
        let mut labels = Vec::with_capacity(b);
        let mut truths = Vec::with_capacity(b);
        for s in block {
            check_grid(s.grid_norm.len(), "msnn_validation_loss")?;
            check_grid(s.grid_raw.len(), "msnn_validation_loss")?;
            grid.extend_from_slice(&s.grid_norm);
            raw.extend_from_slice(&s.grid_raw);
            labels.push(s.label);
            truths.push(s.truth.clone());
        }
        let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
        let raw = Tensor::new(vec![b, GRID_LEN], raw)?;
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &input, &labels)?;
        let loss = msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, MSNN_ALPHA)?;
        loss_sum += tape.value(loss)[0] * b as f64;
    }
    Ok(loss_sum / samples.len() as f64)
}

/// Classifier accuracy and mean reconstructor fidelity on a sample set.
#[derive(Debug, Clone, Copy)]
pub struct RfbEval {
    pub accuracy: f64,
    pub mean_fidelity: f64,
}

/// Inference evaluation of the classifier-regressor: argmax class accuracy
/// and the fidelity of states rebuilt from the predicted class and feature
/// slots. Rebuild failures score zero fidelity.
pub fn evaluate_rfb(
    model: &RfbModel,
    samples: &[RfbSample],
    dim: usize,
    table: &CoefficientTable,
) -> Result<RfbEval> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set"));
    }
    let mut correct = 0usize;
    let mut fidelity_sum = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for block in samples.chunks(64) {
        let b = block.len();
        let mut grid = Vec::with_capacity(b * GRID_LEN);
        for s in block {
            check_grid(s.grid.len(), "evaluate_rfb")?;
            grid.extend_from_slice(&s.grid);
        }
        let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &input, &mut rng)?;
        let logits = tape.value(out.logits);
        let features = tape.value(out.features);
        for (i, s) in block.iter().enumerate() {
            let row = &logits[i * 7..(i + 1) * 7];
            let predicted = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .expect("seven logits");
            if predicted == s.label {
                correct += 1;
            }
            let mut f = [0.0; 6];
            f.copy_from_slice(&features[i * 6..(i + 1) * 6]);
            let score = match reconstruct_from_output(predicted, f, dim, table) {
                Ok(rho) => fidelity(&rho, &s.truth)?,
                Err(_) => 0.0,
            };
            fidelity_sum += score;
        }
    }
    Ok(RfbEval {
        accuracy: correct as f64 / samples.len() as f64,
        mean_fidelity: fidelity_sum / samples.len() as f64,
    })
}

/// Single-grid inference through the classifier-regressor: the predicted
/// class index plus the state its features rebuild.
pub fn rfb_reconstruct_one(
    model: &RfbModel,
    grid_norm: &[f64],
    dim: usize,
    table: &CoefficientTable,
) -> Result<(usize, DensityMatrix)> {
    check_grid(grid_norm.len(), "rfb_reconstruct_one")?;
    let input = Tensor::new(vec![1, 1, SIDE, SIDE], grid_norm.to_vec())?;
    let mut tape = Tape::new(false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, &input, &mut rng)?;
    let logits = tape.value(out.logits);
    let predicted = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("seven logits");
    let mut features = [0.0; 6];
    features.copy_from_slice(tape.value(out.features));
    let rho = reconstruct_from_output(predicted, features, dim, table)?;
    Ok((predicted, rho))
}

/// Mean fidelity of decoded and projected split densities on a sample set.
#[derive(Debug, Clone, Copy)]
pub struct MsEval {
    pub mean_fidelity: f64,
}

/// Inference evaluation of the measurement-supervised network: decode each
/// predicted field into a density, project it onto the physical cone, and
/// average fidelity against the truth. Decode failures score zero.
pub fn evaluate_msnn(model: &mut MsModel, samples: &[MsSample]) -> Result<MsEval> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set"));
    }
    let dim = samples[0].truth.dim();
    let masks = SplitMasks::new(dim);
    let mut fidelity_sum = 0.0;
    for block in samples.chunks(64) {
        let b = block.len();
        let mut grid = Vec::with_capacity(b * GRID_LEN);
        let mut labels = Vec::with_capacity(b);
        for s in block {
            check_grid(s.grid_norm.len(), "evaluate_msnn")?;
            grid.extend_from_slice(&s.grid_norm);
            labels.push(s.label);
        }
        let input = Tensor::new(vec![b, 1, SIDE, SIDE], grid)?;
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &input, &labels)?;
        for (i, s) in block.iter().enumerate() {
            let t = tape.select_index(out.t_field, i)?;
            let ch_re = tape.select_index(t, 0)?;
            let ch_im = tape.select_index(t, 1)?;
            let score = match crate::nn::split_density_on_tape(&mut tape, ch_re, ch_im, &masks) {
                Ok((rho_re, rho_im)) => {
                    let re = tape.value(rho_re).to_vec();
                    let im = tape.value(rho_im).to_vec();
                    let mat = ComplexMatrix::from_fn(dim, |r, c| {
                        crate::C64::new(re[r * dim + c], im[r * dim + c])
                    })?;
                    match project_to_physical(&mat) {
                        Ok(rho) => fidelity(&rho, &s.truth)?,
                        Err(_) => 0.0,
                    }
                }
                Err(_) => 0.0,
            };
            fidelity_sum += score;
        }
    }
    Ok(MsEval { mean_fidelity: fidelity_sum / samples.len() as f64 })
}

/// Single-grid inference through the measurement-supervised network: the
/// decoded split density projected onto the physical cone.
pub fn msnn_reconstruct_one(
    model: &mut MsModel,
    grid_norm: &[f64],
    label: usize,
) -> Result<DensityMatrix> {
    check_grid(grid_norm.len(), "msnn_reconstruct_one")?;
    // The predicted field is (2, SIDE, SIDE); its spatial side is the
    // density dimension by construction.
    let dim = SIDE;
    let masks = SplitMasks::new(dim);
    let input = Tensor::new(vec![1, 1, SIDE, SIDE], grid_norm.to_vec())?;
    let mut tape = Tape::new(false);
    let out = model.forward(&mut tape, &input, &[label])?;
    let t = tape.select_index(out.t_field, 0)?;
    let ch_re = tape.select_index(t, 0)?;
    let ch_im = tape.select_index(t, 1)?;
    let (rho_re, rho_im) = crate::nn::split_density_on_tape(&mut tape, ch_re, ch_im, &masks)?;
    let re = tape.value(rho_re).to_vec();
    let im = tape.value(rho_im).to_vec();
    let mat = ComplexMatrix::from_fn(dim, |r, c| crate::C64::new(re[r * dim + c], im[r * dim + c]))?;
    project_to_physical(&mat)
}
