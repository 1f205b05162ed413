//! Measurement-supervised network producing a split density parameterization.
//!
//! The label embedding is added to the flattened grid, three convolutions
//! (16, 8, 2 channels) map the sum to a two-channel field T, and the two
//! channels become the real and imaginary parts of a split factor pair. The
//! loss compares the Husimi image of the decoded density against the raw
//! input grid and, density-supervised, the decoded matrix against the truth.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;
use crate::measurement::{sensing_matrix, GridGeometry};
use crate::nn::tape::{BatchNormState, NodeId, Tape, Tensor, LEAKY_SLOPE};

/// Weight of the density supervision terms in the loss.
pub const MSNN_ALPHA: f64 = 100.0;

/// Trace magnitudes at or below this are rejected as near-singular.
pub const SPLIT_TRACE_FLOOR: f64 = 1e-9;

/// Sensing matrix split into real and imaginary parts for tape use.
///
/// For Hermitian input the Husimi values are `re * vec(Re rho) - im *
/// vec(Im rho)`; the analytically vanishing imaginary response is dropped.
pub struct SensingTables {
    re: Rc<Vec<f64>>,
    im: Rc<Vec<f64>>,
    rows: usize,
    dim: usize,
}

impl SensingTables {
    pub fn new(geometry: &GridGeometry, dim: usize) -> Result<Self> {
        let matrix = sensing_matrix(geometry, dim)?;
        let rows = matrix.rows();
        let cols = matrix.cols();
        let mut re = vec![0.0; rows * cols];
        let mut im = vec![0.0; rows * cols];
        for i in 0..rows {
            for (j, entry) in matrix.row(i).iter().enumerate() {
                re[i * cols + j] = entry.re;
                im[i * cols + j] = entry.im;
            }
        }
        Ok(Self { re: Rc::new(re), im: Rc::new(im), rows, dim })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Records the Husimi response of an on-tape density matrix pair.
    pub fn husimi_on_tape(
        &self,
        tape: &mut Tape,
        rho_re: NodeId,
        rho_im: NodeId,
    ) -> Result<NodeId> {
        let cols = self.dim * self.dim;
        let vre = tape.reshape(rho_re, vec![cols])?;
        let vim = tape.reshape(rho_im, vec![cols])?;
        let qre = tape.const_linear(vre, Rc::clone(&self.re), self.rows)?;
        let qim = tape.const_linear(vim, Rc::clone(&self.im), self.rows)?;
        tape.sub(qre, qim)
    }
}

/// Constant triangle masks shared by every split decode of one dimension.
pub struct SplitMasks {
    lower: Rc<Vec<f64>>,
    strict_lower: Rc<Vec<f64>>,
    strict_upper: Rc<Vec<f64>>,
    dim: usize,
}

impl SplitMasks {
    pub fn new(dim: usize) -> Self {
        let mut lower = vec![0.0; dim * dim];
        let mut strict_lower = vec![0.0; dim * dim];
        let mut strict_upper = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                if j < i {
                    lower[i * dim + j] = 1.0;
                    strict_lower[i * dim + j] = 1.0;
                } else if j == i {
                    lower[i * dim + j] = 1.0;
                } else {
                    strict_upper[i * dim + j] = 1.0;
                }
            }
        }
        Self {
            lower: Rc::new(lower),
            strict_lower: Rc::new(strict_lower),
            strict_upper: Rc::new(strict_upper),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.lower)
    }

    pub fn strict_lower(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.strict_lower)
    }

    pub fn strict_upper(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.strict_upper)
    }
}

/// Decodes a two-channel field T into a normalized density matrix, recorded
/// on the tape so gradients flow back into both channels.
///
/// The lower factor L takes the lower triangle of T with the imaginary part
/// of the diagonal dropped; the upper factor is the conjugate transpose of
/// the strict upper triangle. The output is (L L# - U U#) / trace, which is
/// Hermitian by construction and unit-trace after the division. Traces with
/// magnitude at or below [`SPLIT_TRACE_FLOOR`] are rejected.
pub fn split_density_on_tape(
    tape: &mut Tape,
    ch_re: NodeId,
    ch_im: NodeId,
    masks: &SplitMasks,
) -> Result<(NodeId, NodeId)> {
    let d = masks.dim;
    if tape.shape(ch_re) != [d, d] || tape.shape(ch_im) != [d, d] {
        return Err(Error::ShapeMismatch {
            primitive: "split_density",
            detail: format!(
                "channels {:?} / {:?} against mask dimension {}",
                tape.shape(ch_re),
                tape.shape(ch_im),
                d
            ),
        });
    }
    let l_re = tape.mask(ch_re, Rc::clone(&masks.lower))?;
    let l_im = tape.mask(ch_im, Rc::clone(&masks.strict_lower))?;
    let s_re = tape.mask(ch_re, Rc::clone(&masks.strict_upper))?;
    let s_im = tape.mask(ch_im, Rc::clone(&masks.strict_upper))?;
    let u_re = tape.transpose(s_re)?;
    let u_im_pos = tape.transpose(s_im)?;
    let u_im = tape.scale(u_im_pos, -1.0);

    let gram = |re: NodeId, im: NodeId, tape: &mut Tape| -> Result<(NodeId, NodeId)> {
        let re_t = tape.transpose(re)?;
        let im_t = tape.transpose(im)?;
        let rr = tape.matmul(re, re_t)?;
        let ii = tape.matmul(im, im_t)?;
        let ir = tape.matmul(im, re_t)?;
        let ri = tape.matmul(re, im_t)?;
        Ok((tape.add(rr, ii)?, tape.sub(ir, ri)?))
    };
    let (ll_re, ll_im) = gram(l_re, l_im, tape)?;
    let (uu_re, uu_im) = gram(u_re, u_im, tape)?;
    let diff_re = tape.sub(ll_re, uu_re)?;
    let diff_im = tape.sub(ll_im, uu_im)?;
    let trace = tape.trace(diff_re)?;
    let trace_value = tape.value(trace)[0];
    if trace_value.abs() <= SPLIT_TRACE_FLOOR {
        return Err(Error::NearSingularNormalization { trace: trace_value });
    }
    let rho_re = tape.div_scalar(diff_re, trace)?;
    let rho_im = tape.div_scalar(diff_im, trace)?;
    Ok((rho_re, rho_im))
}

/// (in channels, out channels) for the three convolutions; all stride 1.
const CONVS: [(usize, usize); 3] = [(1, 16), (16, 8), (8, 2)];

const IDX_EMBED_W: usize = 0;
const IDX_EMBED_B: usize = 1;
const IDX_CONV: [usize; 3] = [2, 6, 10];

/// Parameter tensors and batch-norm state of the measurement-supervised
/// network.
///
/// Layout: label embedding (weight, bias), then per convolution a kernel,
/// bias, and for the first two a batch-norm gamma and beta. The final
/// convolution is linear; its first-channel bias starts at one so the
/// decoded factor is diagonally dominant from the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct MsModel {
    params: Vec<Tensor>,
    bn: [BatchNormState; 2],
}

/// Node handles produced by one forward pass.
pub struct MsOutput {
    /// Leaf ids of the parameters, in `MsModel` layout order.
    pub param_ids: Vec<NodeId>,
    /// Two-channel split field, shape `(batch, 2, side, side)`.
    pub t_field: NodeId,
}

impl MsModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(12);
        let embed_bound = 1.0 / (7.0f64).sqrt();
        params.push(Tensor::uniform_init(vec![7, 1024], embed_bound, &mut rng));
        params.push(Tensor::uniform_init(vec![1024], embed_bound, &mut rng));
        for (block, (cin, cout)) in CONVS.iter().enumerate() {
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            params.push(Tensor::uniform_init(vec![*cout, *cin, 3, 3], bound, &mut rng));
            if block == 2 {
                let mut bias = Tensor::zeros(vec![*cout]);
                bias.data_mut()[0] = 1.0;
                params.push(bias);
            } else {
                params.push(Tensor::uniform_init(vec![*cout], bound, &mut rng));
                let mut gamma = Tensor::zeros(vec![*cout]);
                gamma.data_mut().fill(1.0);
                params.push(gamma);
                params.push(Tensor::zeros(vec![*cout]));
            }
        }
        Self { params, bn: [BatchNormState::new(16), BatchNormState::new(8)] }
    }

    pub fn from_parts(params: Vec<Tensor>, bn: [BatchNormState; 2]) -> Result<Self> {
        let reference = Self::new(0);
        if params.len() != reference.params.len()
            || params
                .iter()
                .zip(&reference.params)
                .any(|(a, b)| a.shape() != b.shape())
            || bn[0].running_mean.len() != 16
            || bn[1].running_mean.len() != 8
        {
            return Err(Error::ShapeMismatch {
                primitive: "msnn_from_parts",
                detail: "parameter layout does not match the architecture".into(),
            });
        }
        Ok(Self { params, bn })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState; 2] {
        &self.bn
    }

    /// Records a forward pass for a `(batch, 1, 32, 32)` grid and integer
    /// class labels. Training mode updates the batch-norm running state.
    pub fn forward(&mut self, tape: &mut Tape, grid: &Tensor, labels: &[usize]) -> Result<MsOutput> {
        let shape = grid.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != 32 || shape[3] != 32 {
            return Err(Error::ShapeMismatch {
                primitive: "msnn_forward",
                detail: format!("expected (batch, 1, 32, 32), got {:?}", shape),
            });
        }
        let batch = shape[0];
        if labels.len() != batch || labels.iter().any(|&l| l >= 7) {
            return Err(Error::ShapeMismatch {
                primitive: "msnn_forward",
                detail: format!("{} labels for batch {}", labels.len(), batch),
            });
        }
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p)).collect();

        let mut one_hot = Tensor::zeros(vec![batch, 7]);
        for (b, &l) in labels.iter().enumerate() {
            one_hot.data_mut()[b * 7 + l] = 1.0;
        }
        let labels_node = tape.leaf(&one_hot);
        let embed = tape.dense(labels_node, param_ids[IDX_EMBED_W], param_ids[IDX_EMBED_B])?;
        let grid_node = tape.leaf(grid);
        let flat = tape.reshape(grid_node, vec![batch, 1024])?;
        let summed = tape.add(flat, embed)?;
        let mut x = tape.reshape(summed, vec![batch, 1, 32, 32])?;
        for (block, base) in IDX_CONV.iter().enumerate() {
            let y = tape.conv2d(x, param_ids[*base], 1, 1)?;
            let y = tape.add_bias_channel(y, param_ids[*base + 1])?;
            if block < 2 {
                let y = tape.batch_norm(
                    y,
                    param_ids[*base + 2],
                    param_ids[*base + 3],
                    &mut self.bn[block],
                )?;
                x = tape.leaky_relu(y, LEAKY_SLOPE);
            } else {
                x = y;
            }
        }
        Ok(MsOutput { param_ids, t_field: x })
    }
}

/// Measurement loss plus weighted density supervision, averaged over the
/// batch: `MAE(m_in, m_pred) + alpha (MAE(Re diff) + MAE(Im diff))`.
///
/// `m_raw` holds the unnormalized Husimi rows the predictions must match;
/// the decoded densities are compared entrywise against `truths`.
pub fn msnn_loss(
    tape: &mut Tape,
    output: &MsOutput,
    m_raw: &Tensor,
    truths: &[DensityMatrix],
    tables: &SensingTables,
    masks: &SplitMasks,
    alpha: f64,
) -> Result<NodeId> {
    let shape = tape.shape(output.t_field).to_vec();
    let d = masks.dim();
    let batch = shape[0];
    if shape != [batch, 2, d, d]
        || m_raw.shape() != [batch, tables.rows()]
        || truths.len() != batch
        || tables.dim() != d
    {
        return Err(Error::ShapeMismatch {
            primitive: "msnn_loss",
            detail: format!(
                "field {:?}, measurements {:?}, {} truths",
                shape,
                m_raw.shape(),
                truths.len()
            ),
        });
    }
    let m_node = tape.leaf(m_raw);
    let mut per_sample = Vec::with_capacity(batch);
    for b in 0..batch {
        let t = tape.select_index(output.t_field, b)?;
        let ch_re = tape.select_index(t, 0)?;
        let ch_im = tape.select_index(t, 1)?;
        let (rho_re, rho_im) = split_density_on_tape(tape, ch_re, ch_im, masks)?;

        let q_pred = tables.husimi_on_tape(tape, rho_re, rho_im)?;
        let m_row = tape.select_index(m_node, b)?;
        let loss_m = tape.mean_abs_error(q_pred, m_row)?;

        let truth = &truths[b];
        if truth.dim() != d {
            return Err(Error::DimensionMismatch(truth.dim(), d));
        }
        let mut true_re = Tensor::zeros(vec![d, d]);
        let mut true_im = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            for j in 0..d {
                true_re.data_mut()[i * d + j] = truth.mat()[(i, j)].re;
                true_im.data_mut()[i * d + j] = truth.mat()[(i, j)].im;
            }
        }
        let true_re = tape.leaf(&true_re);
        let true_im = tape.leaf(&true_im);
        let mae_re = tape.mean_abs_error(rho_re, true_re)?;
        let mae_im = tape.mean_abs_error(rho_im, true_im)?;
        let density_sum = tape.add(mae_re, mae_im)?;
        let weighted = tape.scale(density_sum, alpha);
        per_sample.push(tape.add(loss_m, weighted)?);
    }
    tape.mean_scalars(&per_sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{husimi_q, normalize_for_net};
    use crate::nn::adam::{AdamState, OptimConfig};
    use crate::states::{coherent_state, fock_state};
    use crate::C64;

    fn sample_batch(batch: usize) -> (Tensor, Tensor, Vec<DensityMatrix>, Vec<usize>) {
        let geometry = GridGeometry::standard();
        let mut norm = Vec::with_capacity(batch * 1024);
        let mut raw = Vec::with_capacity(batch * 1024);
        let mut truths = Vec::with_capacity(batch);
        let mut labels = Vec::with_capacity(batch);
        for i in 0..batch {
            let rho = if i % 2 == 0 {
                coherent_state(C64::new(0.8, -0.3), 32).unwrap()
            } else {
                fock_state(2, 32).unwrap()
            };
            let grid = husimi_q(&rho, &geometry).unwrap();
            raw.extend_from_slice(grid.values());
            norm.extend_from_slice(normalize_for_net(&grid).unwrap().values());
            truths.push(rho);
            labels.push(if i % 2 == 0 { 1 } else { 0 });
        }
        (
            Tensor::new(vec![batch, 1, 32, 32], norm).unwrap(),
            Tensor::new(vec![batch, 1024], raw).unwrap(),
            truths,
            labels,
        )
    }

    #[test]
    fn forward_emits_two_channel_field_and_is_deterministic() {
        let mut model = MsModel::new(3);
        let (grid, _, _, labels) = sample_batch(2);
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &grid, &labels).unwrap();
        assert_eq!(tape.shape(out.t_field), &[2, 2, 32, 32]);

        let mut tape2 = Tape::new(false);
        let out2 = model.forward(&mut tape2, &grid, &labels).unwrap();
        assert_eq!(tape.value(out.t_field), tape2.value(out2.t_field));
    }

    #[test]
    fn label_embedding_changes_the_field() {
        let mut model = MsModel::new(5);
        let (grid, _, _, _) = sample_batch(1);
        let mut ta = Tape::new(false);
        let oa = model.forward(&mut ta, &grid, &[0]).unwrap();
        let mut tb = Tape::new(false);
        let ob = model.forward(&mut tb, &grid, &[4]).unwrap();
        assert_ne!(ta.value(oa.t_field), tb.value(ob.t_field));
    }

    #[test]
    fn split_decode_is_hermitian_unit_trace_at_initialization() {
        let mut model = MsModel::new(7);
        let (grid, _, _, labels) = sample_batch(1);
        let masks = SplitMasks::new(32);
        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &grid, &labels).unwrap();
        let t = tape.select_index(out.t_field, 0).unwrap();
        let ch_re = tape.select_index(t, 0).unwrap();
        let ch_im = tape.select_index(t, 1).unwrap();
        let (rho_re, rho_im) = split_density_on_tape(&mut tape, ch_re, ch_im, &masks).unwrap();
        let re = tape.value(rho_re);
        let im = tape.value(rho_im);
        let mut trace = 0.0;
        for i in 0..32 {
            trace += re[i * 32 + i];
            for j in 0..32 {
                assert!((re[i * 32 + j] - re[j * 32 + i]).abs() < 1e-12);
                assert!((im[i * 32 + j] + im[j * 32 + i]).abs() < 1e-12);
            }
        }
        assert!((trace - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_decode_rejects_zero_trace() {
        let masks = SplitMasks::new(4);
        let mut tape = Tape::new(false);
        let zero = tape.leaf(&Tensor::zeros(vec![4, 4]));
        let err = split_density_on_tape(&mut tape, zero, zero, &masks).unwrap_err();
        assert!(matches!(err, Error::NearSingularNormalization { .. }));
    }

    #[test]
    fn loss_assembles_measurement_and_density_terms() {
        let mut model = MsModel::new(11);
        let (grid, raw, truths, labels) = sample_batch(2);
        let geometry = GridGeometry::standard();
        let tables = SensingTables::new(&geometry, 32).unwrap();
        let masks = SplitMasks::new(32);

        let run = |model: &mut MsModel, alpha: f64| {
            let mut tape = Tape::new(false);
            let out = model.forward(&mut tape, &grid, &labels).unwrap();
            let loss = msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, alpha).unwrap();
            tape.value(loss)[0]
        };
        let with_density = run(&mut model, MSNN_ALPHA);
        let measurement_only = run(&mut model, 0.0);
        assert!(with_density > measurement_only);

        // The alpha scaling is exactly linear: the density contribution at
        // alpha = 100 is 100x the contribution at alpha = 1.
        let at_one = run(&mut model, 1.0);
        let lhs = with_density - measurement_only;
        let rhs = 100.0 * (at_one - measurement_only);
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn measurement_term_matches_a_direct_evaluation() {
        // Recompute the alpha = 0 loss from the tape values by hand.
        let mut model = MsModel::new(13);
        let (grid, raw, truths, labels) = sample_batch(1);
        let geometry = GridGeometry::standard();
        let tables = SensingTables::new(&geometry, 32).unwrap();
        let masks = SplitMasks::new(32);

        let mut tape = Tape::new(false);
        let out = model.forward(&mut tape, &grid, &labels).unwrap();
        let loss = msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, 0.0).unwrap();

        let t = tape.select_index(out.t_field, 0).unwrap();
        let ch_re = tape.select_index(t, 0).unwrap();
        let ch_im = tape.select_index(t, 1).unwrap();
        let (rho_re, rho_im) = split_density_on_tape(&mut tape, ch_re, ch_im, &masks).unwrap();
        let q = tables.husimi_on_tape(&mut tape, rho_re, rho_im).unwrap();
        let mut manual = 0.0;
        for (p, m) in tape.value(q).iter().zip(raw.data()) {
            manual += (p - m).abs();
        }
        manual /= 1024.0;
        assert!((tape.value(loss)[0] - manual).abs() < 1e-15);
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut model = MsModel::new(17);
        let (grid, raw, truths, labels) = sample_batch(2);
        let geometry = GridGeometry::standard();
        let tables = SensingTables::new(&geometry, 32).unwrap();
        let masks = SplitMasks::new(32);
        let mut tape = Tape::new(true);
        let out = model.forward(&mut tape, &grid, &labels).unwrap();
        let loss = msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, MSNN_ALPHA).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (i, &id) in out.param_ids.iter().enumerate() {
            let live = grads.get(id).iter().any(|&g| g != 0.0);
            assert!(live, "parameter tensor {} received no gradient", i);
        }
    }

    #[test]
    fn few_adam_steps_reduce_the_loss() {
        let mut model = MsModel::new(19);
        let (grid, raw, truths, labels) = sample_batch(2);
        let geometry = GridGeometry::standard();
        let tables = SensingTables::new(&geometry, 32).unwrap();
        let masks = SplitMasks::new(32);
        let config = OptimConfig { learning_rate: 1e-3, ..OptimConfig::default() };
        let mut adam = AdamState::new(model.params());
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..10 {
            let mut tape = Tape::new(true);
            let out = model.forward(&mut tape, &grid, &labels).unwrap();
            let loss =
                msnn_loss(&mut tape, &out, &raw, &truths, &tables, &masks, MSNN_ALPHA).unwrap();
            let value = tape.value(loss)[0];
            if step == 0 {
                first = value;
            }
            last = value;
            let grads = tape.backward(loss).unwrap();
            let grad_vecs: Vec<Vec<f64>> =
                out.param_ids.iter().map(|&id| grads.get(id).to_vec()).collect();
            adam.step(model.params_mut(), &grad_vecs, &config).unwrap();
        }
        assert!(last < first, "loss {} -> {}", first, last);
    }
}
