//! Density-matrix reconstruction from Husimi grids.
//!
//! Four engines share one result type: direct linear inversion of the
//! sensing map, the multiplicative fixed-point likelihood iteration, and
//! Adam gradient descent over two factor parameterizations (a Cholesky
//! factor, always physical, and a split difference of factors that can
//! leave the physical cone and is projected back at the end).

use nalgebra::{Cholesky as NaCholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hilbert::{fidelity, ComplexMatrix, DensityMatrix, HERMITICITY_TOL, TRACE_TOL};
use crate::measurement::{sensing_matrix, GridKets, HusimiGrid};
use crate::nn::{
    split_density_on_tape, AdamState, OptimConfig, SensingTables, SplitMasks, Tape, Tensor,
    SPLIT_TRACE_FLOOR,
};
use crate::C64;
use rand::Rng;

/// Standard deviation of the Gaussian jitter applied to factor
/// initializations before gradient descent.
pub const GD_INIT_JITTER: f64 = 0.01;

/// Smallest tolerated ratio between the extreme Cholesky pivots of the
/// normal matrix; below it the least-squares solve is declared singular.
const PIVOT_COLLAPSE: f64 = 1e-12;

/// One reconstruction outcome, shared by every engine.
#[derive(Debug, Clone)]
pub struct ReconResult {
    pub rho_hat: DensityMatrix,
    /// Filled when the caller supplied the true state.
    pub fidelity_vs_truth: Option<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    /// Loss before the first update and after each one; always
    /// `iterations + 1` entries.
    pub loss_history: Vec<f64>,
}

/// Factor layout for gradient-descent reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    Cholesky,
    Split,
}

impl Parameterization {
    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Cholesky => "cholesky",
            Parameterization::Split => "split",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cholesky" => Ok(Parameterization::Cholesky),
            "split" => Ok(Parameterization::Split),
            other => Err(Error::UnsupportedFormat(format!(
                "unknown parameterization {other:?}, expected cholesky or split"
            ))),
        }
    }
}

/// Real and imaginary entries of a lower-triangular Cholesky factor, stored
/// as full row-major `dim x dim` grids. Entries on or above the diagonal of
/// `im`, and above the diagonal of `re`, are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyParams {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Real and imaginary entries of a full square field T whose lower triangle
/// feeds one factor and whose strict upper triangle feeds the other.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

fn check_param_layout(kind: &'static str, dim: usize, re: &[f64], im: &[f64]) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if re.len() != dim * dim || im.len() != dim * dim {
        return Err(Error::ShapeMismatch {
            primitive: kind,
            detail: format!(
                "dim {} wants {} entries per part, got {} and {}",
                dim,
                dim * dim,
                re.len(),
                im.len()
            ),
        });
    }
    if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite factor entry"));
    }
    Ok(())
}

/// F F# for a complex factor, summed in fixed k order so every caller is
/// bitwise reproducible.
fn gram(factor: &ComplexMatrix) -> ComplexMatrix {
    let dim = factor.dim();
    ComplexMatrix::from_fn(dim, |i, j| {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..dim {
            acc += factor[(i, k)] * factor[(j, k)].conj();
        }
        acc
    })
    .expect("dimension already validated")
}

fn lower_factor(dim: usize, re: &[f64], im: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |i, j| {
        if j < i {
            C64::new(re[i * dim + j], im[i * dim + j])
        } else if j == i {
            C64::new(re[i * dim + j], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
    .expect("dimension already validated")
}

fn upper_factor_dagger(dim: usize, re: &[f64], im: &[f64]) -> ComplexMatrix {
    // Conjugate transpose of the strict upper triangle: strictly lower.
    ComplexMatrix::from_fn(dim, |i, j| {
        if j < i {
            C64::new(re[j * dim + i], -im[j * dim + i])
        } else {
            C64::new(0.0, 0.0)
        }
    })
    .expect("dimension already validated")
}

/// L L# normalized to unit trace; positive semidefinite by construction.
///
/// The factor diagonal keeps its imaginary part only through `re`, matching
/// the split decoding, so a zero strict-upper split reproduces this map
/// exactly.
pub fn density_from_cholesky(params: &CholeskyParams) -> Result<DensityMatrix> {
    check_param_layout("density_from_cholesky", params.dim, &params.re, &params.im)?;
    let l = lower_factor(params.dim, &params.re, &params.im);
    let m = gram(&l);
    let tr = m.trace().re;
    if tr.abs() <= 1e-30 {
        return Err(Error::DegenerateTrace { trace: tr });
    }
    DensityMatrix::from_psd_construction(m, None)
}

/// Hermitian matrix with unit trace but no positivity guarantee, the output
/// space of the split decoding.
#[derive(Debug, Clone)]
pub struct HermitianUnitTrace {
    mat: ComplexMatrix,
}

impl HermitianUnitTrace {
    /// Validates hermiticity and unit trace against the crate tolerances.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_finite() {
            return Err(Error::DegenerateInput("non-finite matrix entry"));
        }
        let dev = mat.hermitian_deviation();
        if dev > HERMITICITY_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidParameter {
                name: "trace",
                value: tr.re,
                expected: "1 within tolerance",
            });
        }
        Ok(Self { mat })
    }

    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> ComplexMatrix {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    /// Nearest physical state under eigenvalue clipping.
    pub fn project(&self) -> Result<DensityMatrix> {
        project_to_physical(&self.mat)
    }
}

/// (L L# - U U#) / trace for the split factor pair.
///
/// L is the lower triangle of T with the diagonal's imaginary part dropped;
/// U is the conjugate transpose of the strict upper triangle. The difference
/// is Hermitian by construction; traces with magnitude at or below
/// [`SPLIT_TRACE_FLOOR`] are rejected as near-singular.
pub fn density_from_split(params: &SplitParams) -> Result<HermitianUnitTrace> {
    check_param_layout("density_from_split", params.dim, &params.re, &params.im)?;
    let l = lower_factor(params.dim, &params.re, &params.im);
    let u = upper_factor_dagger(params.dim, &params.re, &params.im);
    let diff = gram(&l).sub(&gram(&u));
    let tr = diff.trace().re;
    if tr.abs() <= SPLIT_TRACE_FLOOR {
        return Err(Error::NearSingularNormalization { trace: tr });
    }
    // Same hermitize-then-scale sequence as the Cholesky path, so the two
    // agree bitwise when the strict upper triangle is zero.
    let h = diff.hermitized();
    let tr = h.trace().re;
    Ok(HermitianUnitTrace { mat: h.scale(C64::new(1.0 / tr, 0.0)) })
}

/// Clips negative eigenvalues to zero and renormalizes the trace.
///
/// Fails with a projection error when no positive weight remains.
pub fn project_to_physical(mat: &ComplexMatrix) -> Result<DensityMatrix> {
    let (eigenvalues, vectors) = mat.hermitian_eig()?;
    let clipped: Vec<f64> = eigenvalues.iter().map(|&e| e.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(Error::ProjectionFailure);
    }
    let dim = mat.dim();
    let rebuilt = ComplexMatrix::from_fn(dim, |i, j| {
        let mut acc = C64::new(0.0, 0.0);
        for (k, &w) in clipped.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            acc += vectors[(i, k)] * vectors[(j, k)].conj() * w;
        }
        acc
    })?;
    DensityMatrix::from_psd_construction(rebuilt, None)
}

fn attach_fidelity(result: &mut ReconResult, truth: Option<&DensityMatrix>) -> Result<()> {
    if let Some(t) = truth {
        result.fidelity_vs_truth = Some(fidelity(&result.rho_hat, t)?);
    }
    Ok(())
}

/// Ridge-regularized least-squares inversion of the sensing map, followed by
/// hermitization and projection onto the physical cone.
///
/// Solves the normal equations (A# A + ridge I) x = A# b with a dense
/// Cholesky factorization; a failed factorization reports the problem as
/// ill-conditioned at the given ridge.
pub fn linear_inversion(
    grid: &HusimiGrid,
    dim: usize,
    ridge: f64,
    truth: Option<&DensityMatrix>,
) -> Result<ReconResult> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "ridge",
            value: ridge,
            expected: "non-negative",
        });
    }
    let sensing = sensing_matrix(grid.geometry(), dim)?;
    let rows = sensing.rows();
    let cols = sensing.cols();
    let b = grid.values();

    // Dense normal equations; cols = dim^2 stays small for desk-scale dims.
    let mut normal = DMatrix::<C64>::zeros(cols, cols);
    for i in 0..rows {
        let row = sensing.row(i);
        for p in 0..cols {
            let ap = row[p].conj();
            if ap.norm_sqr() == 0.0 {
                continue;
            }
            for q in 0..cols {
                normal[(p, q)] += ap * row[q];
            }
        }
    }
    for p in 0..cols {
        normal[(p, p)] += C64::new(ridge, 0.0);
    }
    let mut rhs = DMatrix::<C64>::zeros(cols, 1);
    for i in 0..rows {
        let row = sensing.row(i);
        for p in 0..cols {
            rhs[(p, 0)] += row[p].conj() * b[i];
        }
    }

    let factor = NaCholesky::new(normal).ok_or(Error::IllConditioned { ridge })?;
    // Rank collapse can slip through the factorization as rounding-noise
    // pivots; a pivot span wider than 1e12 means the normal matrix is
    // singular to working precision and the solve would return garbage.
    let l = factor.l_dirty();
    let mut pivot_min = f64::INFINITY;
    let mut pivot_max = 0.0_f64;
    for i in 0..cols {
        let d = l[(i, i)].re;
        if !d.is_finite() {
            return Err(Error::IllConditioned { ridge });
        }
        pivot_min = pivot_min.min(d);
        pivot_max = pivot_max.max(d);
    }
    if !(pivot_min > pivot_max * PIVOT_COLLAPSE) {
        return Err(Error::IllConditioned { ridge });
    }
    let solution = factor.solve(&rhs);

    let raw = ComplexMatrix::from_fn(dim, |m, n| solution[(m * dim + n, 0)])?;
    let hermitian = raw.hermitized();
    let flat: Vec<C64> = (0..dim * dim)
        .map(|idx| hermitian[(idx / dim, idx % dim)])
        .collect();
    let predicted = sensing.apply(&flat)?;
    let residual =
        predicted.iter().zip(b).map(|(p, d)| (p - d).abs()).sum::<f64>() / rows as f64;

    let rho_hat = project_to_physical(&hermitian)?;
    let mut result = ReconResult {
        rho_hat,
        fidelity_vs_truth: None,
        iterations: 0,
        final_loss: residual,
        loss_history: vec![residual],
    };
    attach_fidelity(&mut result, truth)?;
    Ok(result)
}

/// Multiplicative fixed-point likelihood iteration.
///
/// With O_i the grid projector |alpha_i><alpha_i| / pi and p_i = tr(O_i rho),
/// each sweep applies rho <- N[(I + eps R) rho (I + eps R)] where
/// R = sum_i (d_i / p_i) O_i. The recorded loss is the negative mean
/// log-likelihood -mean_i(d_i ln p_i); it is non-increasing for damping
/// eps <= 0.2 on clean grids. Vanishing p_i aborts with an underflow error.
pub fn mle_iterative(
    grid: &HusimiGrid,
    dim: usize,
    iterations: usize,
    epsilon: f64,
    truth: Option<&DensityMatrix>,
) -> Result<ReconResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            expected: "finite and positive",
        });
    }
    let kets = GridKets::new(grid.geometry(), dim)?;
    let rows = grid.geometry().len();
    let data = grid.values();
    let pi = std::f64::consts::PI;

    let mut rho = DensityMatrix::from_psd_construction(ComplexMatrix::identity(dim)?, None)?;
    let mut history = Vec::with_capacity(iterations + 1);

    let nll = |probs: &HusimiGrid| -> Result<f64> {
        let mut acc = 0.0;
        for (i, (&d, &p)) in data.iter().zip(probs.values()).enumerate() {
            if p < 1e-300 {
                return Err(Error::LikelihoodUnderflow { index: i });
            }
            acc += d * p.ln();
        }
        Ok(-acc / rows as f64)
    };

    let mut probs = kets.evaluate(&rho)?;
    history.push(nll(&probs)?);

    for _ in 0..iterations {
        let mut r = ComplexMatrix::zeros(dim)?;
        for i in 0..rows {
            let p = probs.values()[i];
            if p < 1e-300 {
                return Err(Error::LikelihoodUnderflow { index: i });
            }
            let w = data[i] / (p * pi);
            if w == 0.0 {
                continue;
            }
            let ket = kets.ket(i);
            for m in 0..dim {
                let wm = ket[m] * w;
                for n in 0..dim {
                    r[(m, n)] += wm * ket[n].conj();
                }
            }
        }
        let mut t = r.scale(C64::new(epsilon, 0.0));
        for d in 0..dim {
            t[(d, d)] += C64::new(1.0, 0.0);
        }
        let stepped = t.matmul(rho.mat()).matmul(&t);
        rho = DensityMatrix::from_psd_construction(stepped, None)?;
        probs = kets.evaluate(&rho)?;
        history.push(nll(&probs)?);
    }

    let final_loss = *history.last().expect("history holds the initial loss");
    let mut result = ReconResult {
        rho_hat: rho,
        fidelity_vs_truth: None,
        iterations,
        final_loss,
        loss_history: history,
    };
    attach_fidelity(&mut result, truth)?;
    Ok(result)
}

/// Factor initialization for gradient descent: identity / sqrt(dim) plus
/// Gaussian jitter on the real part, pure jitter on the imaginary part.
/// Draw order is all real entries row-major, then all imaginary ones.
fn init_factor_pair(dim: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 1.0 / (dim as f64).sqrt();
    let mut re = vec![0.0; dim * dim];
    for (idx, v) in re.iter_mut().enumerate() {
        let jitter: f64 = rng.sample(StandardNormal);
        *v = GD_INIT_JITTER * jitter + if idx / dim == idx % dim { base } else { 0.0 };
    }
    let mut im = vec![0.0; dim * dim];
    for v in im.iter_mut() {
        let jitter: f64 = rng.sample(StandardNormal);
        *v = GD_INIT_JITTER * jitter;
    }
    (
        Tensor::new(vec![dim, dim], re).expect("layout is square"),
        Tensor::new(vec![dim, dim], im).expect("layout is square"),
    )
}

fn cholesky_density_on_tape(
    tape: &mut Tape,
    re: crate::nn::NodeId,
    im: crate::nn::NodeId,
    masks: &SplitMasks,
) -> Result<(crate::nn::NodeId, crate::nn::NodeId)> {
    let l_re = tape.mask(re, masks.lower())?;
    let l_im = tape.mask(im, masks.strict_lower())?;
    let re_t = tape.transpose(l_re)?;
    let im_t = tape.transpose(l_im)?;
    let rr = tape.matmul(l_re, re_t)?;
    let ii = tape.matmul(l_im, im_t)?;
    let ir = tape.matmul(l_im, re_t)?;
    let ri = tape.matmul(l_re, im_t)?;
    let ll_re = tape.add(rr, ii)?;
    let ll_im = tape.sub(ir, ri)?;
    let trace = tape.trace(ll_re)?;
    let tr = tape.value(trace)[0];
    if tr.abs() <= 1e-30 {
        return Err(Error::DegenerateTrace { trace: tr });
    }
    Ok((tape.div_scalar(ll_re, trace)?, tape.div_scalar(ll_im, trace)?))
}

/// Adam gradient descent on the mean absolute Husimi mismatch.
///
/// Runs `config.iterations` updates and returns the best-loss iterate, not
/// the last one. The split route projects onto the physical cone before any
/// fidelity is computed; the Cholesky route is physical throughout.
pub fn gd_reconstruct(
    grid: &HusimiGrid,
    dim: usize,
    parameterization: Parameterization,
    config: &OptimConfig,
    truth: Option<&DensityMatrix>,
) -> Result<ReconResult> {
    config.validate()?;
    let masks = SplitMasks::new(dim);
    let tables = SensingTables::new(grid.geometry(), dim)?;
    let target = Tensor::new(vec![grid.geometry().len()], grid.values().to_vec())?;

    let (re, im) = init_factor_pair(dim, config.seed);
    let mut params = vec![re, im];
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(config.iterations + 1);
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();

    for iter in 0..=config.iterations {
        let mut tape = Tape::new(false);
        let re_node = tape.leaf(&params[0]);
        let im_node = tape.leaf(&params[1]);
        let (rho_re, rho_im) = match parameterization {
            Parameterization::Cholesky => {
                cholesky_density_on_tape(&mut tape, re_node, im_node, &masks)?
            }
            Parameterization::Split => {
                split_density_on_tape(&mut tape, re_node, im_node, &masks)?
            }
        };
        let predicted = tables.husimi_on_tape(&mut tape, rho_re, rho_im)?;
        let target_node = tape.leaf(&target);
        let loss = tape.mean_abs_error(predicted, target_node)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: iter, loss: value });
        }
        history.push(value);
        if value < best_loss {
            best_loss = value;
            best_params = params.clone();
        }
        if iter == config.iterations {
            break;
        }
        let grads = tape.backward(loss)?;
        let grad_vecs = vec![grads.get(re_node).to_vec(), grads.get(im_node).to_vec()];
        adam.step(&mut params, &grad_vecs, config)?;
    }

    let rho_hat = match parameterization {
        Parameterization::Cholesky => density_from_cholesky(&CholeskyParams {
            dim,
            re: best_params[0].data().to_vec(),
            im: best_params[1].data().to_vec(),
        })?,
        Parameterization::Split => density_from_split(&SplitParams {
            dim,
            re: best_params[0].data().to_vec(),
            im: best_params[1].data().to_vec(),
        })?
        .project()?,
    };
    let mut result = ReconResult {
        rho_hat,
        fidelity_vs_truth: None,
        iterations: config.iterations,
        final_loss: best_loss,
        loss_history: history,
    };
    attach_fidelity(&mut result, truth)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{husimi_q, GridGeometry};
    use crate::states::{coherent_state, fock_state, thermal_state};

    fn random_params(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let re = (0..dim * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let im = (0..dim * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        (re, im)
    }

    #[test]
    fn cholesky_density_is_physical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (re, im) = random_params(6, 1.0, &mut rng);
            let rho = density_from_cholesky(&CholeskyParams { dim: 6, re, im }).unwrap();
            assert!(rho.mat().hermitian_deviation() <= 1e-12);
            assert!((rho.mat().trace().re - 1.0).abs() <= 1e-12);
            assert!(crate::hilbert::min_eigenvalue(rho.mat()).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn zero_cholesky_params_are_degenerate() {
        let err = density_from_cholesky(&CholeskyParams {
            dim: 4,
            re: vec![0.0; 16],
            im: vec![0.0; 16],
        })
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateTrace { .. }));
    }

    #[test]
    fn split_with_zero_upper_matches_cholesky_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (mut re, mut im) = random_params(5, 1.0, &mut rng);
            // Zero the strict upper triangle so the U factor vanishes.
            for i in 0..5 {
                for j in (i + 1)..5 {
                    re[i * 5 + j] = 0.0;
                    im[i * 5 + j] = 0.0;
                }
            }
            let chol =
                density_from_cholesky(&CholeskyParams { dim: 5, re: re.clone(), im: im.clone() })
                    .unwrap();
            let split = density_from_split(&SplitParams { dim: 5, re, im }).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let a = chol.mat()[(i, j)];
                    let b = split.mat()[(i, j)];
                    assert_eq!(a.re.to_bits(), b.re.to_bits(), "re mismatch at ({i},{j})");
                    assert_eq!(a.im.to_bits(), b.im.to_bits(), "im mismatch at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn random_split_outputs_are_hermitian_unit_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut produced = 0;
        for _ in 0..200 {
            let (re, im) = random_params(8, 1.0, &mut rng);
            match density_from_split(&SplitParams { dim: 8, re, im }) {
                Ok(out) => {
                    produced += 1;
                    assert!(out.mat().hermitian_deviation() <= 1e-10);
                    let tr = out.mat().trace();
                    assert!((tr.re - 1.0).abs() <= 1e-10 && tr.im.abs() <= 1e-10);
                    // Round-trips through the validating constructor.
                    HermitianUnitTrace::new(out.mat().clone()).unwrap();
                }
                Err(Error::NearSingularNormalization { .. }) => {}
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(produced > 150, "only {produced} of 200 draws normalized");
    }

    #[test]
    fn split_singular_example_is_rejected() {
        // T = [[1, u], [0, 0]] with |u| = 1 gives L L# = diag(1, 0) and
        // U U# = diag(0, 1), so the trace of the difference vanishes.
        let u = C64::from_polar(1.0, 0.83);
        let params = SplitParams {
            dim: 2,
            re: vec![1.0, u.re, 0.0, 0.0],
            im: vec![0.0, u.im, 0.0, 0.0],
        };
        let err = density_from_split(&params).unwrap_err();
        assert!(matches!(err, Error::NearSingularNormalization { .. }));
    }

    #[test]
    fn split_matches_the_tape_decoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let masks = SplitMasks::new(6);
        for _ in 0..10 {
            let (re, im) = random_params(6, 1.0, &mut rng);
            let direct =
                density_from_split(&SplitParams { dim: 6, re: re.clone(), im: im.clone() });
            let mut tape = Tape::new(false);
            let re_node = tape.leaf(&Tensor::new(vec![6, 6], re).unwrap());
            let im_node = tape.leaf(&Tensor::new(vec![6, 6], im).unwrap());
            let taped = split_density_on_tape(&mut tape, re_node, im_node, &masks);
            match (direct, taped) {
                (Ok(a), Ok((rho_re, rho_im))) => {
                    let vre = tape.value(rho_re);
                    let vim = tape.value(rho_im);
                    for i in 0..6 {
                        for j in 0..6 {
                            let m = a.mat()[(i, j)];
                            assert!((m.re - vre[i * 6 + j]).abs() <= 1e-12);
                            assert!((m.im - vim[i * 6 + j]).abs() <= 1e-12);
                        }
                    }
                }
                (Err(Error::NearSingularNormalization { .. }),
                 Err(Error::NearSingularNormalization { .. })) => {}
                (a, b) => panic!("decodings disagree: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn projection_clips_the_textbook_example() {
        let mat = ComplexMatrix::from_fn(2, |i, j| {
            if i == j {
                C64::new(if i == 0 { 1.5 } else { -0.5 }, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .unwrap();
        let projected = project_to_physical(&mat).unwrap();
        assert!((projected.mat()[(0, 0)].re - 1.0).abs() <= 1e-12);
        assert!(projected.mat()[(1, 1)].re.abs() <= 1e-12);

        let negative = ComplexMatrix::from_fn(2, |i, j| {
            if i == j {
                C64::new(-1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .unwrap();
        assert!(matches!(project_to_physical(&negative).unwrap_err(), Error::ProjectionFailure));
    }

    #[test]
    fn linear_inversion_recovers_a_coherent_state() {
        let dim = 16;
        let truth = coherent_state(C64::new(1.0, 0.0), dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let result = linear_inversion(&grid, dim, 1e-10, Some(&truth)).unwrap();
        assert!(result.fidelity_vs_truth.unwrap() >= 0.99);
        assert!(result.final_loss <= 1e-6, "residual {}", result.final_loss);
        assert_eq!(result.loss_history.len(), 1);
        assert_eq!(result.iterations, 0);
    }

    #[test]
    fn linear_inversion_reports_ill_conditioning_on_tiny_grids() {
        let dim = 16;
        let truth = coherent_state(C64::new(0.5, 0.2), dim).unwrap();
        let geometry = GridGeometry::new(2, 5.0).unwrap();
        let grid = husimi_q(&truth, &geometry).unwrap();
        let err = linear_inversion(&grid, dim, 0.0, None).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn mle_zero_iterations_returns_the_maximally_mixed_start() {
        let dim = 8;
        let truth = fock_state(1, dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let result = mle_iterative(&grid, dim, 0, 0.2, None).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 / dim as f64 } else { 0.0 };
                assert!((result.rho_hat.mat()[(i, j)].re - want).abs() <= 1e-14);
                assert!(result.rho_hat.mat()[(i, j)].im.abs() <= 1e-14);
            }
        }
        assert_eq!(result.loss_history.len(), 1);
    }

    #[test]
    fn mle_converges_on_the_vacuum_with_monotone_likelihood() {
        let dim = 8;
        let truth = fock_state(0, dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let result = mle_iterative(&grid, dim, 200, 0.2, Some(&truth)).unwrap();
        assert!(result.fidelity_vs_truth.unwrap() >= 0.99);
        for pair in result.loss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "negative log-likelihood increased");
        }
    }

    #[test]
    fn mle_rejects_non_positive_damping() {
        let dim = 8;
        let truth = fock_state(0, dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        for bad in [0.0, -0.1, f64::NAN] {
            let err = mle_iterative(&grid, dim, 5, bad, None).unwrap_err();
            assert!(matches!(err, Error::InvalidParameter { name: "epsilon", .. }));
        }
    }

    #[test]
    fn gd_cholesky_reconstructs_the_vacuum() {
        let dim = 8;
        let truth = fock_state(0, dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let config = OptimConfig {
            learning_rate: 0.01,
            iterations: 1000,
            seed: 1,
            ..OptimConfig::default()
        };
        let result =
            gd_reconstruct(&grid, dim, Parameterization::Cholesky, &config, Some(&truth)).unwrap();
        assert!(result.fidelity_vs_truth.unwrap() >= 0.999, "fidelity {}",
            result.fidelity_vs_truth.unwrap());
        assert_eq!(result.loss_history.len(), 1001);
        assert_eq!(result.final_loss,
            result.loss_history.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn gd_split_improves_over_its_initialization() {
        let dim = 8;
        let truth = thermal_state(1.0, dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let config = OptimConfig {
            learning_rate: 0.01,
            iterations: 200,
            seed: 3,
            ..OptimConfig::default()
        };
        let result =
            gd_reconstruct(&grid, dim, Parameterization::Split, &config, Some(&truth)).unwrap();
        assert!(result.final_loss < 0.5 * result.loss_history[0]);
        // The projected estimate is a valid state.
        assert!(crate::hilbert::min_eigenvalue(result.rho_hat.mat()).unwrap() >= -1e-9);
    }

    #[test]
    fn gd_seeds_change_the_trajectory_but_reruns_are_identical() {
        let dim = 6;
        let truth = coherent_state(C64::new(0.7, 0.1), dim).unwrap();
        let grid = husimi_q(&truth, &GridGeometry::standard()).unwrap();
        let base = OptimConfig {
            learning_rate: 0.01,
            iterations: 20,
            seed: 1,
            ..OptimConfig::default()
        };
        let a = gd_reconstruct(&grid, dim, Parameterization::Cholesky, &base, None).unwrap();
        let b = gd_reconstruct(&grid, dim, Parameterization::Cholesky, &base, None).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        let other = OptimConfig { seed: 2, ..base };
        let c = gd_reconstruct(&grid, dim, Parameterization::Cholesky, &other, None).unwrap();
        assert_ne!(a.loss_history, c.loss_history);
    }

    #[test]
    fn parameterization_names_round_trip() {
        for p in [Parameterization::Cholesky, Parameterization::Split] {
            assert_eq!(Parameterization::from_name(p.name()).unwrap(), p);
        }
        assert!(Parameterization::from_name("dense").is_err());
    }
}
