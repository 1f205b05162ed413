//! Dynamic computation tape.
//!
//! Nodes are appended in execution order, which is already a topological
//! order, so the backward sweep is a single reverse pass. Each node stores a
//! closure that scatters its upstream gradient into its parents' buffers.
//! Values are held behind `Rc` so backward closures can capture them without
//! copying activation memory.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Negative slope used by every leaky ReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Batch-norm variance guard, matching the conventional 1e-5.
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Momentum for batch-norm running statistics.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Dense multi-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                primitive: "tensor",
                detail: format!("shape {:?} does not hold {} elements", shape, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    /// Scalar wrapper, shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Entries drawn uniformly from `[-bound, bound]`, the fan-in
    /// initialisation used for every weight and bias in both networks.
    pub fn uniform_init(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a shape-`[1]` tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::ShapeMismatch {
                primitive: "scalar_value",
                detail: format!("expected a scalar, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

type BackwardFn = Box<dyn Fn(&[f64], &mut [Vec<f64>])>;

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    backward: Option<BackwardFn>,
}

/// Running statistics owned by one batch-norm layer. Updated in place during
/// training forward passes; never differentiated.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self { running_mean: vec![0.0; channels], running_var: vec![1.0; channels] }
    }
}

/// Records a forward pass and replays it in reverse for gradients.
///
/// `training` gates the stochastic regularisers: with it off, dropout and
/// Gaussian noise are exact identities and batch norm uses running statistics.
pub struct Tape {
    nodes: Vec<Node>,
    pub training: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(false)
    }
}

impl Tape {
    pub fn new(training: bool) -> Self {
        Self { nodes: Vec::new(), training }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { shape, value: Rc::new(value), backward });
        NodeId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Snapshot of a node as an owned tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].value.as_ref().clone(),
        }
    }

    fn value_rc(&self, id: NodeId) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes[id.0].value)
    }

    fn check_same_shape(&self, primitive: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                primitive,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    /// Registers an input or parameter leaf. Leaves receive gradients but
    /// propagate nothing further.
    pub fn leaf(&mut self, tensor: &Tensor) -> NodeId {
        self.push(tensor.shape.clone(), tensor.data.clone(), None)
    }

    /// Elementwise sum.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let (pa, pb) = (a.0, b.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[pa].iter_mut().zip(grad) {
                    *g += u;
                }
                for (g, &u) in grads[pb].iter_mut().zip(grad) {
                    *g += u;
                }
            })),
        ))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let (pa, pb) = (a.0, b.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[pa].iter_mut().zip(grad) {
                    *g += u;
                }
                for (g, &u) in grads[pb].iter_mut().zip(grad) {
                    *g -= u;
                }
            })),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        let value: Vec<f64> = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
        let (pa, pb) = (a.0, b.0);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..grad.len() {
                    grads[pa][i] += grad[i] * vb[i];
                    grads[pb][i] += grad[i] * va[i];
                }
            })),
        ))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value: Vec<f64> = self.value(a).iter().map(|x| x * factor).collect();
        let pa = a.0;
        self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[pa].iter_mut().zip(grad) {
                    *g += u * factor;
                }
            })),
        )
    }

    /// Matrix product of `(m, k)` and `(k, n)` operands.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                primitive: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &vb[p * n..(p + 1) * n];
                let out = &mut value[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += x * row[j];
                }
            }
        }
        let (pa, pb) = (a.0, b.0);
        Ok(self.push(
            vec![m, n],
            value,
            Some(Box::new(move |grad, grads| {
                // dA = G B^T, accumulated row by row.
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        let grow = &grad[i * n..(i + 1) * n];
                        let brow = &vb[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        grads[pa][i * k + p] += acc;
                    }
                }
                // dB = A^T G.
                for p in 0..k {
                    for i in 0..m {
                        let x = va[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        let grow = &grad[i * n..(i + 1) * n];
                        let out = &mut grads[pb][p * n..(p + 1) * n];
                        for j in 0..n {
                            out[j] += x * grow[j];
                        }
                    }
                }
            })),
        ))
    }

    /// Adds a length-`f` bias row to every row of a `(b, f)` activation.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb != vec![sx[1]] {
            return Err(Error::ShapeMismatch {
                primitive: "add_bias",
                detail: format!("{:?} + {:?}", sx, sb),
            });
        }
        let (b, f) = (sx[0], sx[1]);
        let vb = self.value_rc(bias);
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(f) {
            for (v, &u) in row.iter_mut().zip(vb.iter()) {
                *v += u;
            }
        }
        let (px, pbias) = (x.0, bias.0);
        Ok(self.push(
            sx,
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[px].iter_mut().zip(grad) {
                    *g += u;
                }
                for i in 0..b {
                    for j in 0..f {
                        grads[pbias][j] += grad[i * f + j];
                    }
                }
            })),
        ))
    }

    /// Adds a per-channel bias to a `(b, c, h, w)` activation.
    pub fn add_bias_channel(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 4 || sb != vec![sx[1]] {
            return Err(Error::ShapeMismatch {
                primitive: "add_bias_channel",
                detail: format!("{:?} + {:?}", sx, sb),
            });
        }
        let (b, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        let vb = self.value_rc(bias);
        let mut value = self.value(x).to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let add = vb[ci];
                for v in &mut value[base..base + hw] {
                    *v += add;
                }
            }
        }
        let (px, pbias) = (x.0, bias.0);
        Ok(self.push(
            sx,
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[px].iter_mut().zip(grad) {
                    *g += u;
                }
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        let mut acc = 0.0;
                        for &u in &grad[base..base + hw] {
                            acc += u;
                        }
                        grads[pbias][ci] += acc;
                    }
                }
            })),
        ))
    }

    /// 2-D convolution over `(b, c_in, h, w)` with kernel
    /// `(c_out, c_in, kh, kw)`, zero padding and the given stride.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(Error::ShapeMismatch {
                primitive: "conv2d",
                detail: format!("input {:?}, kernel {:?}, stride {}", sx, sw, stride),
            });
        }
        let (b, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::ShapeMismatch {
                primitive: "conv2d",
                detail: format!("kernel {:?} exceeds padded input {:?}", sw, sx),
            });
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let vx = self.value_rc(x);
        let vw = self.value_rc(weight);
        let mut value = vec![0.0; b * cout * ho * wo];
        for bi in 0..b {
            for oc in 0..cout {
                for ic in 0..cin {
                    let xin = &vx[(bi * cin + ic) * h * w..(bi * cin + ic + 1) * h * w];
                    let ker = &vw[(oc * cin + ic) * kh * kw..(oc * cin + ic + 1) * kh * kw];
                    let out = &mut value[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = 0.0;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xin[iy as usize * w + ix as usize] * ker[ky * kw + kx];
                                }
                            }
                            out[oy * wo + ox] += acc;
                        }
                    }
                }
            }
        }
        let (px, pw) = (x.0, weight.0);
        Ok(self.push(
            vec![b, cout, ho, wo],
            value,
            Some(Box::new(move |grad, grads| {
                for bi in 0..b {
                    for oc in 0..cout {
                        let gout = &grad[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
                        for ic in 0..cin {
                            let xin = &vx[(bi * cin + ic) * h * w..(bi * cin + ic + 1) * h * w];
                            let ker = &vw[(oc * cin + ic) * kh * kw..(oc * cin + ic + 1) * kh * kw];
                            let kbase = (oc * cin + ic) * kh * kw;
                            let xbase = (bi * cin + ic) * h * w;
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let g = gout[oy * wo + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let iidx = iy as usize * w + ix as usize;
                                            grads[pw][kbase + ky * kw + kx] += g * xin[iidx];
                                            grads[px][xbase + iidx] += g * ker[ky * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            })),
        ))
    }

    /// Leaky rectifier with the given negative slope.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let vx = self.value_rc(x);
        let value: Vec<f64> = vx.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let px = x.0;
        self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..grad.len() {
                    let d = if vx[i] > 0.0 { 1.0 } else { slope };
                    grads[px][i] += grad[i] * d;
                }
            })),
        )
    }

    /// Inverted dropout. Identity when the tape is in inference mode.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter {
                name: "rate",
                value: rate,
                expected: "within [0, 1)",
            });
        }
        if !self.training || rate == 0.0 {
            return Ok(self.identity(x));
        }
        let keep = 1.0 - rate;
        let mask: Rc<Vec<f64>> = Rc::new(
            (0..self.value(x).len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        );
        let value: Vec<f64> = self.value(x).iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let px = x.0;
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..grad.len() {
                    grads[px][i] += grad[i] * mask[i];
                }
            })),
        ))
    }

    /// Additive Gaussian noise with standard deviation `sigma`. Identity when
    /// the tape is in inference mode; gradient is the identity either way.
    pub fn gaussian_noise(&mut self, x: NodeId, sigma: f64, rng: &mut ChaCha8Rng) -> NodeId {
        if !self.training || sigma == 0.0 {
            return self.identity(x);
        }
        let value: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let px = x.0;
        self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[px].iter_mut().zip(grad) {
                    *g += u;
                }
            })),
        )
    }

    fn identity(&mut self, x: NodeId) -> NodeId {
        let px = x.0;
        self.push(
            self.nodes[x.0].shape.clone(),
            self.value(x).to_vec(),
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[px].iter_mut().zip(grad) {
                    *g += u;
                }
            })),
        )
    }

    /// Per-channel batch normalisation of a `(b, c, h, w)` activation.
    ///
    /// Training mode normalises with batch statistics and folds them into the
    /// running estimates; inference mode uses the stored running statistics.
    /// The running state is deliberately outside the gradient path.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BatchNormState,
    ) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::ShapeMismatch {
                primitive: "batch_norm",
                detail: format!("expected (b, c, h, w), got {:?}", sx),
            });
        }
        let (b, c, hw) = (sx[0], sx[1], sx[2] * sx[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.running_mean.len() != c {
            return Err(Error::ShapeMismatch {
                primitive: "batch_norm",
                detail: format!("channel count {} does not match affine parameters", c),
            });
        }
        let vx = self.value_rc(x);
        let vg = self.value_rc(gamma);
        let vbeta = self.value_rc(beta);
        let n = (b * hw) as f64;

        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if self.training {
            for ci in 0..c {
                let mut acc = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * hw;
                    for &v in &vx[base..base + hw] {
                        acc += v;
                    }
                }
                mean[ci] = acc / n;
                let mut acc2 = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * hw;
                    for &v in &vx[base..base + hw] {
                        let d = v - mean[ci];
                        acc2 += d * d;
                    }
                }
                var[ci] = acc2 / n;
            }
            for ci in 0..c {
                state.running_mean[ci] = (1.0 - BATCH_NORM_MOMENTUM) * state.running_mean[ci]
                    + BATCH_NORM_MOMENTUM * mean[ci];
                state.running_var[ci] = (1.0 - BATCH_NORM_MOMENTUM) * state.running_var[ci]
                    + BATCH_NORM_MOMENTUM * var[ci];
            }
        } else {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut value = vec![0.0; vx.len()];
        let mut xhat = vec![0.0; vx.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for k in 0..hw {
                    let xh = (vx[base + k] - mean[ci]) * inv_std[ci];
                    xhat[base + k] = xh;
                    value[base + k] = vg[ci] * xh + vbeta[ci];
                }
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let training = self.training;
        let (px, pg, pbeta) = (x.0, gamma.0, beta.0);
        Ok(self.push(
            sx,
            value,
            Some(Box::new(move |grad, grads| {
                for ci in 0..c {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        for k in 0..hw {
                            sum_g += grad[base + k];
                            sum_gx += grad[base + k] * xhat[base + k];
                        }
                    }
                    grads[pbeta][ci] += sum_g;
                    grads[pg][ci] += sum_gx;
                    let scale = vg[ci] * inv_std[ci];
                    if training {
                        // Batch statistics depend on x, so the gradient
                        // removes the per-channel mean of G and of G*xhat.
                        let mg = sum_g / n;
                        let mgx = sum_gx / n;
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for k in 0..hw {
                                grads[px][base + k] +=
                                    scale * (grad[base + k] - mg - xhat[base + k] * mgx);
                            }
                        }
                    } else {
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for k in 0..hw {
                                grads[px][base + k] += scale * grad[base + k];
                            }
                        }
                    }
                }
            })),
        ))
    }

    /// Fully connected layer: `x (b, f) * w (f, o) + bias (o)`.
    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    /// Reinterprets a node under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        if len != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                primitive: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(x), shape),
            });
        }
        let px = x.0;
        Ok(self.push(
            shape,
            self.value(x).to_vec(),
            Some(Box::new(move |grad, grads| {
                for (g, &u) in grads[px].iter_mut().zip(grad) {
                    *g += u;
                }
            })),
        ))
    }

    /// Drops the leading axis by selecting one index along it.
    pub fn select_index(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || index >= sx[0] {
            return Err(Error::ShapeMismatch {
                primitive: "select_index",
                detail: format!("index {} along shape {:?}", index, sx),
            });
        }
        let inner: usize = sx[1..].iter().product();
        let value = self.value(x)[index * inner..(index + 1) * inner].to_vec();
        let px = x.0;
        Ok(self.push(
            sx[1..].to_vec(),
            value,
            Some(Box::new(move |grad, grads| {
                let out = &mut grads[px][index * inner..(index + 1) * inner];
                for (g, &u) in out.iter_mut().zip(grad) {
                    *g += u;
                }
            })),
        ))
    }

    /// Gathers columns of a `(b, f)` node into a `(b, k)` node.
    pub fn select_columns(&mut self, x: NodeId, columns: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || columns.iter().any(|&c| c >= sx[1]) {
            return Err(Error::ShapeMismatch {
                primitive: "select_columns",
                detail: format!("columns {:?} of shape {:?}", columns, sx),
            });
        }
        let (b, f, k) = (sx[0], sx[1], columns.len());
        let cols = columns.to_vec();
        let vx = self.value_rc(x);
        let mut value = vec![0.0; b * k];
        for bi in 0..b {
            for (j, &cj) in cols.iter().enumerate() {
                value[bi * k + j] = vx[bi * f + cj];
            }
        }
        let px = x.0;
        Ok(self.push(
            vec![b, k],
            value,
            Some(Box::new(move |grad, grads| {
                for bi in 0..b {
                    for (j, &cj) in cols.iter().enumerate() {
                        grads[px][bi * f + cj] += grad[bi * k + j];
                    }
                }
            })),
        ))
    }

    /// Transpose of a 2-D node.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::ShapeMismatch {
                primitive: "transpose",
                detail: format!("expected a matrix, got {:?}", sx),
            });
        }
        let (m, nn) = (sx[0], sx[1]);
        let vx = self.value_rc(x);
        let mut value = vec![0.0; m * nn];
        for i in 0..m {
            for j in 0..nn {
                value[j * m + i] = vx[i * nn + j];
            }
        }
        let px = x.0;
        Ok(self.push(
            vec![nn, m],
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..m {
                    for j in 0..nn {
                        grads[px][i * nn + j] += grad[j * m + i];
                    }
                }
            })),
        ))
    }

    /// Elementwise product with a constant mask of the same element count.
    pub fn mask(&mut self, x: NodeId, mask: Rc<Vec<f64>>) -> Result<NodeId> {
        if mask.len() != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                primitive: "mask",
                detail: format!("mask of {} entries on shape {:?}", mask.len(), self.shape(x)),
            });
        }
        let value: Vec<f64> = self.value(x).iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let px = x.0;
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..grad.len() {
                    grads[px][i] += grad[i] * mask[i];
                }
            })),
        ))
    }

    /// Applies a constant `(m, k)` matrix to a length-`k` vector node.
    pub fn const_linear(&mut self, x: NodeId, matrix: Rc<Vec<f64>>, rows: usize) -> Result<NodeId> {
        let k = self.value(x).len();
        if rows == 0 || matrix.len() != rows * k {
            return Err(Error::ShapeMismatch {
                primitive: "const_linear",
                detail: format!("matrix of {} entries, {} rows, input {}", matrix.len(), rows, k),
            });
        }
        let vx = self.value_rc(x);
        let mut value = vec![0.0; rows];
        for (i, out) in value.iter_mut().enumerate() {
            let row = &matrix[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * vx[j];
            }
            *out = acc;
        }
        let px = x.0;
        Ok(self.push(
            vec![rows],
            value,
            Some(Box::new(move |grad, grads| {
                for i in 0..rows {
                    let g = grad[i];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &matrix[i * k..(i + 1) * k];
                    for j in 0..k {
                        grads[px][j] += g * row[j];
                    }
                }
            })),
        ))
    }

    /// Sum of the main diagonal of a square matrix node, as a scalar.
    pub fn trace(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[0] != sx[1] {
            return Err(Error::ShapeMismatch {
                primitive: "trace",
                detail: format!("expected square matrix, got {:?}", sx),
            });
        }
        let n = sx[0];
        let value = (0..n).map(|i| self.value(x)[i * n + i]).sum();
        let px = x.0;
        Ok(self.push(
            vec![1],
            vec![value],
            Some(Box::new(move |grad, grads| {
                for i in 0..n {
                    grads[px][i * n + i] += grad[0];
                }
            })),
        ))
    }

    /// Divides a node elementwise by a scalar node.
    pub fn div_scalar(&mut self, x: NodeId, scalar: NodeId) -> Result<NodeId> {
        if self.value(scalar).len() != 1 {
            return Err(Error::ShapeMismatch {
                primitive: "div_scalar",
                detail: format!("divisor has shape {:?}", self.shape(scalar)),
            });
        }
        let s = self.value(scalar)[0];
        if s == 0.0 {
            return Err(Error::DegenerateInput("division by a zero scalar node"));
        }
        let vx = self.value_rc(x);
        let value: Vec<f64> = vx.iter().map(|&v| v / s).collect();
        let (px, ps) = (x.0, scalar.0);
        Ok(self.push(
            self.nodes[x.0].shape.clone(),
            value,
            Some(Box::new(move |grad, grads| {
                let mut acc = 0.0;
                for i in 0..grad.len() {
                    grads[px][i] += grad[i] / s;
                    acc += grad[i] * vx[i];
                }
                grads[ps][0] -= acc / (s * s);
            })),
        ))
    }

    /// Mean of a set of scalar nodes, as a scalar.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::DegenerateInput("mean of zero scalars"));
        }
        for &p in parts {
            if self.value(p).len() != 1 {
                return Err(Error::ShapeMismatch {
                    primitive: "mean_scalars",
                    detail: format!("non-scalar part of shape {:?}", self.shape(p)),
                });
            }
        }
        let n = parts.len() as f64;
        let value = parts.iter().map(|&p| self.value(p)[0]).sum::<f64>() / n;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            vec![1],
            vec![value],
            Some(Box::new(move |grad, grads| {
                for &p in &ids {
                    grads[p][0] += grad[0] / n;
                }
            })),
        ))
    }

    /// Mean softmax cross-entropy of `(b, k)` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let sx = self.shape(logits).to_vec();
        if sx.len() != 2 || sx[0] != labels.len() || labels.iter().any(|&l| l >= sx[1]) {
            return Err(Error::ShapeMismatch {
                primitive: "softmax_cross_entropy",
                detail: format!("logits {:?} with {} labels", sx, labels.len()),
            });
        }
        let (b, k) = (sx[0], sx[1]);
        let vx = self.value_rc(logits);
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for bi in 0..b {
            let row = &vx[bi * k..(bi + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                probs[bi * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                probs[bi * k + j] /= denom;
            }
            loss -= (probs[bi * k + labels[bi]]).max(f64::MIN_POSITIVE).ln();
        }
        loss /= b as f64;
        let probs = Rc::new(probs);
        let labels = labels.to_vec();
        let px = logits.0;
        Ok(self.push(
            vec![1],
            vec![loss],
            Some(Box::new(move |grad, grads| {
                let g = grad[0] / b as f64;
                for bi in 0..b {
                    for j in 0..k {
                        let one_hot = if labels[bi] == j { 1.0 } else { 0.0 };
                        grads[px][bi * k + j] += g * (probs[bi * k + j] - one_hot);
                    }
                }
            })),
        ))
    }

    /// Mean absolute error between two same-shape nodes, as a scalar.
    ///
    /// The subgradient at an exact tie is zero.
    pub fn mean_abs_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mean_abs_error", a, b)?;
        let va = self.value_rc(a);
        let vb = self.value_rc(b);
        let n = va.len() as f64;
        let value = va.iter().zip(vb.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let (pa, pb) = (a.0, b.0);
        Ok(self.push(
            vec![1],
            vec![value],
            Some(Box::new(move |grad, grads| {
                let g = grad[0] / n;
                for i in 0..va.len() {
                    let s = (va[i] - vb[i]).signum() * f64::from((va[i] - vb[i]) != 0.0);
                    grads[pa][i] += g * s;
                    grads[pb][i] -= g * s;
                }
            })),
        ))
    }

    /// Reverse sweep from a scalar loss. Returns one gradient buffer per
    /// node, indexable by `NodeId`; every recorded node is visited exactly
    /// once because creation order is topological.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                primitive: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;
        for i in (0..=loss.0).rev() {
            if let Some(backward) = &self.nodes[i].backward {
                let own = std::mem::take(&mut grads[i]);
                backward(&own, &mut grads);
                grads[i] = own;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient buffers produced by a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference gradient check of `f` at `point`, comparing every
    /// coordinate of the analytic gradient against (f(x+h) - f(x-h)) / 2h.
    /// Returns the worst relative error over coordinates.
    pub fn finite_difference_error<F>(point: &mut Tensor, h: f64, mut eval: F) -> f64
    where
        F: FnMut(&Tensor) -> (f64, Vec<f64>),
    {
        let (_, analytic) = eval(point);
        let mut worst: f64 = 0.0;
        for i in 0..point.len() {
            let orig = point.data()[i];
            point.data_mut()[i] = orig + h;
            let (up, _) = eval(point);
            point.data_mut()[i] = orig - h;
            let (down, _) = eval(point);
            point.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform_init(shape, 1.0, rng)
    }

    #[test]
    fn add_sub_mul_match_finite_differences() {
        let mut r = rng(11);
        let other = random_tensor(vec![3, 4], &mut r);
        for op in 0..3 {
            let mut point = random_tensor(vec![3, 4], &mut r);
            let err = finite_difference_error(&mut point, 1e-6, |p| {
                let mut tape = Tape::new(false);
                let a = tape.leaf(p);
                let b = tape.leaf(&other);
                let y = match op {
                    0 => tape.add(a, b).unwrap(),
                    1 => tape.sub(a, b).unwrap(),
                    _ => tape.mul(a, b).unwrap(),
                };
                // Reduce to a scalar through a fixed weighting so each input
                // coordinate has a distinct influence.
                let w = Tensor::new(
                    vec![3, 4],
                    (0..12).map(|i| 0.3 + 0.1 * i as f64).collect(),
                )
                .unwrap();
                let wn = tape.leaf(&w);
                let prod = tape.mul(y, wn).unwrap();
                let zero = tape.leaf(&Tensor::zeros(vec![3, 4]));
                let loss = tape.mean_abs_error(prod, zero).unwrap();
                let grads = tape.backward(loss).unwrap();
                (tape.value(loss)[0], grads.get(a).to_vec())
            });
            assert!(err <= 1e-4, "op {} gradient error {:.3e}", op, err);
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences_in_both_operands() {
        let mut r = rng(13);
        let a0 = random_tensor(vec![3, 5], &mut r);
        let b0 = random_tensor(vec![5, 2], &mut r);
        let target = random_tensor(vec![3, 2], &mut r);

        let mut point = a0.clone();
        let err_a = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let a = tape.leaf(p);
            let b = tape.leaf(&b0);
            let y = tape.matmul(a, b).unwrap();
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(y, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(a).to_vec())
        });
        assert!(err_a <= 1e-4, "left operand gradient error {:.3e}", err_a);

        let mut point = b0.clone();
        let err_b = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let a = tape.leaf(&a0);
            let b = tape.leaf(p);
            let y = tape.matmul(a, b).unwrap();
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(y, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(b).to_vec())
        });
        assert!(err_b <= 1e-4, "right operand gradient error {:.3e}", err_b);
    }

    #[test]
    fn conv2d_matches_brute_force_on_small_input() {
        // Hand-checkable case: 1x1x3x3 input, 1x1x2x2 kernel, stride 1, no
        // padding. Output entries are plain dot products.
        let x = Tensor::new(
            vec![1, 1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        let mut tape = Tape::new(false);
        let xn = tape.leaf(&x);
        let wn = tape.leaf(&w);
        let y = tape.conv2d(xn, wn, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
        // (1 + 1 + -4 + 10, 2 + 1.5 - 5 + 12, ...)
        let expect = [8.0, 10.5, 15.5, 18.0];
        for (got, want) in tape.value(y).iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "value {} vs {}", got, want);
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut r = rng(17);
        let x0 = random_tensor(vec![1, 1, 8, 8], &mut r);
        let w0 = random_tensor(vec![2, 1, 3, 3], &mut r);
        let target = random_tensor(vec![1, 2, 4, 4], &mut r);

        let eval = |x: &Tensor, w: &Tensor, which: usize| {
            let mut tape = Tape::new(false);
            let xn = tape.leaf(x);
            let wn = tape.leaf(w);
            let y = tape.conv2d(xn, wn, 2, 1).unwrap();
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(y, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            let g = if which == 0 { grads.get(xn) } else { grads.get(wn) };
            (tape.value(loss)[0], g.to_vec())
        };

        let mut point = x0.clone();
        let err_x = finite_difference_error(&mut point, 1e-6, |p| eval(p, &w0, 0));
        assert!(err_x <= 1e-5, "input gradient error {:.3e}", err_x);

        let mut point = w0.clone();
        let err_w = finite_difference_error(&mut point, 1e-6, |p| eval(&x0, p, 1));
        assert!(err_w <= 1e-5, "kernel gradient error {:.3e}", err_w);
    }

    #[test]
    fn bias_leaky_relu_and_reductions_match_finite_differences() {
        let mut r = rng(19);
        let x0 = random_tensor(vec![2, 5], &mut r);
        let b0 = random_tensor(vec![5], &mut r);
        let target = random_tensor(vec![2, 5], &mut r);

        let mut point = b0.clone();
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let x = tape.leaf(&x0);
            let b = tape.leaf(p);
            let y = tape.add_bias(x, b).unwrap();
            let a = tape.leaky_relu(y, LEAKY_SLOPE);
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(a, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(b).to_vec())
        });
        assert!(err <= 1e-4, "bias gradient error {:.3e}", err);
    }

    #[test]
    fn channel_bias_gradient_matches_finite_differences() {
        let mut r = rng(23);
        let x0 = random_tensor(vec![2, 3, 4, 4], &mut r);
        let b0 = random_tensor(vec![3], &mut r);
        let target = random_tensor(vec![2, 3, 4, 4], &mut r);
        let mut point = b0.clone();
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let x = tape.leaf(&x0);
            let b = tape.leaf(p);
            let y = tape.add_bias_channel(x, b).unwrap();
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(y, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(b).to_vec())
        });
        assert!(err <= 1e-4, "channel bias gradient error {:.3e}", err);
    }

    #[test]
    fn batch_norm_training_gradient_matches_finite_differences() {
        let mut r = rng(29);
        let x0 = random_tensor(vec![3, 2, 3, 3], &mut r);
        let g0 = random_tensor(vec![2], &mut r);
        let beta0 = random_tensor(vec![2], &mut r);
        let target = random_tensor(vec![3, 2, 3, 3], &mut r);

        let eval = |x: &Tensor, g: &Tensor, bt: &Tensor, which: usize| {
            let mut tape = Tape::new(true);
            let mut state = BatchNormState::new(2);
            let xn = tape.leaf(x);
            let gn = tape.leaf(g);
            let bn = tape.leaf(bt);
            let y = tape.batch_norm(xn, gn, bn, &mut state).unwrap();
            let t = tape.leaf(&target);
            let loss = tape.mean_abs_error(y, t).unwrap();
            let grads = tape.backward(loss).unwrap();
            let picked = match which {
                0 => grads.get(xn),
                1 => grads.get(gn),
                _ => grads.get(bn),
            };
            (tape.value(loss)[0], picked.to_vec())
        };

        let mut point = x0.clone();
        let err_x = finite_difference_error(&mut point, 1e-6, |p| eval(p, &g0, &beta0, 0));
        assert!(err_x <= 1e-4, "input gradient error {:.3e}", err_x);

        let mut point = g0.clone();
        let err_g = finite_difference_error(&mut point, 1e-6, |p| eval(&x0, p, &beta0, 1));
        assert!(err_g <= 1e-4, "gamma gradient error {:.3e}", err_g);

        let mut point = beta0.clone();
        let err_b = finite_difference_error(&mut point, 1e-6, |p| eval(&x0, &g0, p, 2));
        assert!(err_b <= 1e-4, "beta gradient error {:.3e}", err_b);
    }

    #[test]
    fn batch_norm_inference_uses_running_statistics() {
        let mut r = rng(31);
        let x0 = random_tensor(vec![2, 1, 2, 2], &mut r);
        let gamma = Tensor::new(vec![1], vec![1.0]).unwrap();
        let beta = Tensor::zeros(vec![1]);
        let mut state = BatchNormState::new(1);
        state.running_mean[0] = 0.25;
        state.running_var[0] = 4.0;

        let mut tape = Tape::new(false);
        let xn = tape.leaf(&x0);
        let gn = tape.leaf(&gamma);
        let bn = tape.leaf(&beta);
        let y = tape.batch_norm(xn, gn, bn, &mut state).unwrap();
        for (out, inp) in tape.value(y).iter().zip(x0.data()) {
            let want = (inp - 0.25) / (4.0f64 + BATCH_NORM_EPS).sqrt();
            assert!((out - want).abs() < 1e-12);
        }
        // Inference must not touch the stored statistics.
        assert_eq!(state.running_mean[0], 0.25);
        assert_eq!(state.running_var[0], 4.0);
    }

    #[test]
    fn dropout_and_noise_are_identities_in_inference_mode() {
        let mut r = rng(37);
        let x0 = random_tensor(vec![4, 4], &mut r);
        let mut tape = Tape::new(false);
        let x = tape.leaf(&x0);
        let d = tape.dropout(x, 0.3, &mut r).unwrap();
        let g = tape.gaussian_noise(d, 0.05, &mut r);
        assert_eq!(tape.value(g), x0.data());
    }

    #[test]
    fn dropout_scales_surviving_entries_and_blocks_gradients() {
        let _ = rng(41);
        let x0 = Tensor::new(vec![1000], vec![1.0; 1000]).unwrap();
        let mut tape = Tape::new(true);
        let x = tape.leaf(&x0);
        let mut noise_rng = rng(99);
        let d = tape.dropout(x, 0.3, &mut noise_rng).unwrap();
        let kept = tape.value(d).iter().filter(|&&v| v != 0.0).count();
        // Survivors are scaled by 1/(1-rate); sample keep frequency stays
        // near 0.7 for 1000 draws.
        for &v in tape.value(d) {
            assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
        }
        assert!((kept as f64 / 1000.0 - 0.7).abs() < 0.05, "kept {}", kept);

        let zero = tape.leaf(&Tensor::zeros(vec![1000]));
        let loss = tape.mean_abs_error(d, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        let live = grads.get(x).iter().filter(|&&g| g != 0.0).count();
        assert_eq!(live, kept, "gradient support must match the dropout mask");
    }

    #[test]
    fn gaussian_noise_gradient_is_identity_in_training_mode() {
        let mut r = rng(43);
        let x0 = random_tensor(vec![6], &mut r);
        let mut tape = Tape::new(true);
        let x = tape.leaf(&x0);
        let mut noise_rng = rng(7);
        let y = tape.gaussian_noise(x, 0.05, &mut noise_rng);
        assert_ne!(tape.value(y), x0.data());
        let zero = tape.leaf(&Tensor::zeros(vec![6]));
        let diff = tape.sub(y, zero).unwrap();
        let w = tape.leaf(&Tensor::new(vec![6], vec![1.0; 6]).unwrap());
        let prod = tape.mul(diff, w).unwrap();
        let z2 = tape.leaf(&Tensor::zeros(vec![6]));
        let loss = tape.mean_abs_error(prod, z2).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (i, &g) in grads.get(x).iter().enumerate() {
            let want = tape.value(y)[i].signum() / 6.0;
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_cross_entropy_matches_uniform_logit_value_and_finite_differences() {
        // Uniform logits over 7 classes: loss is ln 7 regardless of labels.
        let x0 = Tensor::zeros(vec![2, 7]);
        let mut tape = Tape::new(false);
        let x = tape.leaf(&x0);
        let loss = tape.softmax_cross_entropy(x, &[3, 5]).unwrap();
        assert!((tape.value(loss)[0] - (7.0f64).ln()).abs() < 1e-12);

        let mut r = rng(47);
        let mut point = random_tensor(vec![3, 7], &mut r);
        let labels = [0usize, 4, 6];
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let x = tape.leaf(p);
            let loss = tape.softmax_cross_entropy(x, &labels).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(x).to_vec())
        });
        assert!(err <= 1e-4, "cross-entropy gradient error {:.3e}", err);
    }

    #[test]
    fn mean_abs_error_gradient_matches_finite_differences() {
        let mut r = rng(53);
        let b0 = random_tensor(vec![4, 3], &mut r);
        let mut point = random_tensor(vec![4, 3], &mut r);
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let a = tape.leaf(p);
            let b = tape.leaf(&b0);
            let loss = tape.mean_abs_error(a, b).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(a).to_vec())
        });
        assert!(err <= 1e-4, "mean abs error gradient error {:.3e}", err);
    }

    #[test]
    fn structural_ops_route_gradients_exactly() {
        let mut r = rng(59);
        let x0 = random_tensor(vec![2, 6], &mut r);
        let mut tape = Tape::new(false);
        let x = tape.leaf(&x0);
        let resh = tape.reshape(x, vec![3, 4]).unwrap();
        let tr = tape.transpose(resh).unwrap();
        assert_eq!(tape.shape(tr), &[4, 3]);
        let row = tape.select_index(tr, 2).unwrap();
        assert_eq!(tape.value(row), &[x0.data()[2], x0.data()[6], x0.data()[10]]);
        let zero = tape.leaf(&Tensor::zeros(vec![3]));
        let loss = tape.mean_abs_error(row, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x);
        let mut live: Vec<usize> = (0..12).filter(|&i| gx[i] != 0.0).collect();
        live.sort_unstable();
        assert_eq!(live, vec![2, 6, 10]);
    }

    #[test]
    fn select_columns_gathers_and_scatters() {
        let x0 = Tensor::new(vec![2, 4], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let mut tape = Tape::new(false);
        let x = tape.leaf(&x0);
        let y = tape.select_columns(x, &[0, 2]).unwrap();
        assert_eq!(tape.value(y), &[0.0, 2.0, 4.0, 6.0]);
        let zero = tape.leaf(&Tensor::zeros(vec![2, 2]));
        let loss = tape.mean_abs_error(y, zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x);
        assert_eq!(gx[1], 0.0);
        assert_eq!(gx[3], 0.0);
        assert!(gx[2] != 0.0);
    }

    #[test]
    fn const_linear_trace_and_div_scalar_match_finite_differences() {
        let mut r = rng(61);
        let matrix: Rc<Vec<f64>> =
            Rc::new((0..12).map(|i| 0.25 * (i as f64) - 1.0).collect());
        let mut point = random_tensor(vec![4], &mut r);
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let x = tape.leaf(p);
            let y = tape.const_linear(x, Rc::clone(&matrix), 3).unwrap();
            let zero = tape.leaf(&Tensor::zeros(vec![3]));
            let loss = tape.mean_abs_error(y, zero).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(x).to_vec())
        });
        assert!(err <= 1e-4, "const_linear gradient error {:.3e}", err);

        let mut point = random_tensor(vec![3, 3], &mut r);
        // Keep the trace away from zero so div_scalar stays well defined
        // under the finite-difference probes.
        for i in 0..3 {
            point.data_mut()[i * 3 + i] += 3.0;
        }
        let err = finite_difference_error(&mut point, 1e-6, |p| {
            let mut tape = Tape::new(false);
            let x = tape.leaf(p);
            let t = tape.trace(x).unwrap();
            let y = tape.div_scalar(x, t).unwrap();
            let zero = tape.leaf(&Tensor::zeros(vec![3, 3]));
            let loss = tape.mean_abs_error(y, zero).unwrap();
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss)[0], grads.get(x).to_vec())
        });
        assert!(err <= 1e-4, "trace/div_scalar gradient error {:.3e}", err);
    }

    #[test]
    fn mask_and_mean_scalars_combine_losses() {
        let mut r = rng(67);
        let x0 = random_tensor(vec![3, 3], &mut r);
        let m: Rc<Vec<f64>> = Rc::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        let mut tape = Tape::new(false);
        let x = tape.leaf(&x0);
        let masked = tape.mask(x, Rc::clone(&m)).unwrap();
        let zero = tape.leaf(&Tensor::zeros(vec![3, 3]));
        let l1 = tape.mean_abs_error(masked, zero).unwrap();
        let l2 = tape.trace(x).unwrap();
        let both = tape.mean_scalars(&[l1, l2]).unwrap();
        let want = 0.5 * (tape.value(l1)[0] + tape.value(l2)[0]);
        assert!((tape.value(both)[0] - want).abs() < 1e-15);
        let grads = tape.backward(both).unwrap();
        // Off-mask, off-diagonal coordinates receive no gradient.
        assert_eq!(grads.get(x)[2], 0.0);
        assert!(grads.get(x)[0] != 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(&Tensor::zeros(vec![2, 2]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { primitive: "backward", .. }));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::new(false);
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mean_abs_error(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.reshape(a, vec![7]).is_err());
        assert!(tape.softmax_cross_entropy(a, &[0]).is_err());
    }
}
