//! Classifier-regressor network over Husimi grids.
//!
//! Six convolutional blocks (3x3 kernels, channel ladder 8-16-32-64-64-64,
//! stride 2 on every second block) reduce a 1x32x32 grid to 1024 trunk
//! features. A dense head classifies the state family; the logits are
//! projected back into feature space and summed with the trunk before a
//! single regression pass emits three complex feature slots.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;
use crate::nn::tape::{NodeId, Tape, Tensor, LEAKY_SLOPE};
use crate::states::{
    binomial_n_max, build_state, CoefficientTable, Family, StateSpec, NUM_N_BAR_SET,
};
use crate::C64;

/// Standard deviation of the additive noise layer inside each block.
pub const RFB_NOISE_SIGMA: f64 = 0.05;

/// Dropout rate inside each block.
pub const RFB_DROPOUT: f64 = 0.3;

/// Trunk width after the final block (64 channels on a 4x4 grid).
pub const RFB_TRUNK: usize = 1024;

/// Number of state families, the classifier output width.
pub const RFB_CLASSES: usize = 7;

/// Regression output width: three complex features stored re, im.
pub const RFB_FEATURES: usize = 6;

/// (in channels, out channels, stride) for the six blocks.
const BLOCKS: [(usize, usize, usize); 6] =
    [(1, 8, 1), (8, 16, 2), (16, 32, 1), (32, 64, 2), (64, 64, 1), (64, 64, 2)];

/// Columns of the feature vector holding real and imaginary parts.
pub const RE_COLUMNS: [usize; 3] = [0, 2, 4];
pub const IM_COLUMNS: [usize; 3] = [1, 3, 5];

/// Parameter tensors of the classifier-regressor network.
///
/// Layout: six (kernel, bias) pairs, then classifier weight and bias, the
/// logit-to-trunk fusion projection, and the regression weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RfbModel {
    params: Vec<Tensor>,
}

const IDX_CLS_W: usize = 12;
const IDX_CLS_B: usize = 13;
const IDX_FUSION: usize = 14;
const IDX_REG_W: usize = 15;
const IDX_REG_B: usize = 16;

/// Node handles produced by one forward pass.
pub struct RfbOutput {
    /// Leaf ids of the parameters, in `RfbModel` layout order.
    pub param_ids: Vec<NodeId>,
    /// Flattened trunk features, shape `(batch, 1024)`.
    pub trunk: NodeId,
    /// Classifier logits, shape `(batch, 7)`.
    pub logits: NodeId,
    /// Regressed feature slots, shape `(batch, 6)`.
    pub features: NodeId,
}

impl RfbModel {
    /// Fan-in uniform initialisation of all seventeen parameter tensors.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(17);
        for (cin, cout, _) in BLOCKS {
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            params.push(Tensor::uniform_init(vec![cout, cin, 3, 3], bound, &mut rng));
            params.push(Tensor::uniform_init(vec![cout], bound, &mut rng));
        }
        let bound = 1.0 / (RFB_TRUNK as f64).sqrt();
        params.push(Tensor::uniform_init(vec![RFB_TRUNK, RFB_CLASSES], bound, &mut rng));
        params.push(Tensor::uniform_init(vec![RFB_CLASSES], bound, &mut rng));
        let fusion_bound = 1.0 / (RFB_CLASSES as f64).sqrt();
        params.push(Tensor::uniform_init(vec![RFB_CLASSES, RFB_TRUNK], fusion_bound, &mut rng));
        params.push(Tensor::uniform_init(vec![RFB_TRUNK, RFB_FEATURES], bound, &mut rng));
        params.push(Tensor::uniform_init(vec![RFB_FEATURES], bound, &mut rng));
        Self { params }
    }

    pub fn from_params(params: Vec<Tensor>) -> Result<Self> {
        let reference = Self::new(0);
        if params.len() != reference.params.len()
            || params
                .iter()
                .zip(&reference.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch {
                primitive: "rfb_from_params",
                detail: "parameter layout does not match the architecture".into(),
            });
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records a forward pass for a `(batch, 1, 32, 32)` input.
    ///
    /// The rng feeds the noise and dropout layers; it is untouched when the
    /// tape is in inference mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<RfbOutput> {
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != 32 || shape[3] != 32 {
            return Err(Error::ShapeMismatch {
                primitive: "rfb_forward",
                detail: format!("expected (batch, 1, 32, 32), got {:?}", shape),
            });
        }
        let batch = shape[0];
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p)).collect();

        let mut x = tape.leaf(input);
        for (block, (_, _, stride)) in BLOCKS.iter().enumerate() {
            let y = tape.conv2d(x, param_ids[2 * block], *stride, 1)?;
            let y = tape.add_bias_channel(y, param_ids[2 * block + 1])?;
            let y = tape.gaussian_noise(y, RFB_NOISE_SIGMA, rng);
            let y = tape.dropout(y, RFB_DROPOUT, rng)?;
            x = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        let trunk = tape.reshape(x, vec![batch, RFB_TRUNK])?;
        let logits = tape.dense(trunk, param_ids[IDX_CLS_W], param_ids[IDX_CLS_B])?;
        let projected = tape.matmul(logits, param_ids[IDX_FUSION])?;
        let fused = tape.add(trunk, projected)?;
        let features = tape.dense(fused, param_ids[IDX_REG_W], param_ids[IDX_REG_B])?;
        Ok(RfbOutput { param_ids, trunk, logits, features })
    }
}

/// Classification plus regression loss: cross-entropy over family logits,
/// one mean absolute error over real feature slots and one over imaginary.
pub fn rfb_loss(
    tape: &mut Tape,
    output: &RfbOutput,
    labels: &[usize],
    truth: NodeId,
) -> Result<NodeId> {
    let ce = tape.softmax_cross_entropy(output.logits, labels)?;
    let pred_re = tape.select_columns(output.features, &RE_COLUMNS)?;
    let pred_im = tape.select_columns(output.features, &IM_COLUMNS)?;
    let true_re = tape.select_columns(truth, &RE_COLUMNS)?;
    let true_im = tape.select_columns(truth, &IM_COLUMNS)?;
    let mae_re = tape.mean_abs_error(pred_re, true_re)?;
    let mae_im = tape.mean_abs_error(pred_im, true_im)?;
    let partial = tape.add(ce, mae_re)?;
    tape.add(partial, mae_im)
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

fn clamp_int(x: f64, lo: i64, hi: i64) -> i64 {
    round_half_up(x).clamp(lo, hi)
}

/// Rescales a complex amplitude so its modulus lies in `[lo, hi]`, keeping
/// the phase. A zero amplitude snaps to the positive real axis.
fn clamp_modulus(re: f64, im: f64, lo: f64, hi: f64) -> C64 {
    let z = C64::new(re, im);
    let m = z.norm();
    if m < 1e-12 {
        return C64::new(lo, 0.0);
    }
    let target = m.clamp(lo, hi);
    z * (target / m)
}

/// Maps a predicted class and raw feature vector onto the nearest valid
/// state description and builds its density matrix.
///
/// Integer slots round half up, continuous slots clamp into their admissible
/// ranges, and the tabulated mean-photon values snap to the nearest entry.
pub fn reconstruct_from_output(
    class: usize,
    features: [f64; 6],
    dim: usize,
    table: &CoefficientTable,
) -> Result<DensityMatrix> {
    let family = Family::from_label(class as u8)?;
    let zero = C64::new(0.0, 0.0);
    let spec_features = match family {
        Family::Fock => {
            let hi = 16.min(dim as i64 - 1);
            let n = clamp_int(features[0], 1, hi);
            [C64::new(n as f64, 0.0), zero, zero]
        }
        Family::Coherent => {
            let alpha = clamp_modulus(features[0], features[1], 1e-3, 3.0f64.sqrt());
            [alpha, zero, zero]
        }
        Family::Thermal => [C64::new(features[0].clamp(1.0, 16.0), 0.0), zero, zero],
        Family::Cat => {
            let alpha = clamp_modulus(features[0], features[1], 1.0, 3.0);
            let s = clamp_int(features[2], 0, 2);
            let r = clamp_int(features[4], 0, 2 * s + 1);
            [alpha, C64::new(s as f64, 0.0), C64::new(r as f64, 0.0)]
        }
        Family::Num => {
            let nearest = NUM_N_BAR_SET
                .iter()
                .copied()
                .min_by(|a, b| {
                    (a - features[0]).abs().total_cmp(&(b - features[0]).abs())
                })
                .expect("tabulated set is non-empty");
            [C64::new(nearest, 0.0), zero, zero]
        }
        Family::Binomial => {
            let s = clamp_int(features[0], 0, 2);
            let n_hi = binomial_n_max(s as usize, dim)? as i64;
            let n = clamp_int(features[2], 2, n_hi);
            let mu = clamp_int(features[4], 0, 1);
            [C64::new(s as f64, 0.0), C64::new(n as f64, 0.0), C64::new(mu as f64, 0.0)]
        }
        Family::Gkp => {
            let mu = clamp_int(features[0], 0, 1);
            let delta = features[2].clamp(0.2, 0.5);
            [C64::new(mu as f64, 0.0), C64::new(delta, 0.0), zero]
        }
    };
    let spec = StateSpec::new(family, spec_features, dim)?;
    build_state(&spec, table)
}
