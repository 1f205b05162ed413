//! Truncated Fock-space operator algebra.
//!
//! Dense complex matrices over a Fock cutoff `dim`, the ladder operator a,
//! the displacement operator D(α) = exp(αa† − α*a), PSD square roots, and the
//! Uhlmann fidelity F(ρ,σ) = (tr √(√ρ σ √ρ))². Spectral work goes through a
//! Hermitian eigendecomposition (nalgebra's symmetric solver); D(α) is the
//! exponential of its anti-Hermitian generator taken on the spectral path,
//! which keeps it unitary to rounding instead of Taylor-truncation accuracy.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;

const CZERO: C64 = C64::new(0.0, 0.0);

/// Max-abs deviation ‖ρ−ρ†‖∞ allowed for a physical density matrix.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Allowed |trace − 1| for a physical density matrix.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue a physical density matrix may carry.
pub const EIG_FLOOR: f64 = -1e-9;
/// Below this an eigenvalue is no longer rounding dust; psd_sqrt refuses.
pub const PSD_HARD_FLOOR: f64 = -1e-6;

// ── Dense complex matrices ──────────────────────────────────────────────

/// Square complex matrix, row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            data: vec![CZERO; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = C64::new(1.0, 0.0);
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        Ok(m)
    }

    /// Builds from row-major entries; length must be dim².
    pub fn from_entries(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch(data.len(), dim * dim));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entry slice.
    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn add(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Self { dim: self.dim, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Self { dim: self.dim, data }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = vec![CZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == CZERO {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * row[j];
                }
            }
        }
        Self { dim: n, data: out }
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let n = self.dim;
        let mut out = vec![CZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = self.data[i * n + j].conj();
            }
        }
        Self { dim: n, data: out }
    }

    /// Matrix-vector product; `v` has length dim.
    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut out = vec![CZERO; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = CZERO;
            for j in 0..n {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// ‖m − m†‖∞, the max-abs Hermiticity defect.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = self.data[i * n + j] - self.data[j * n + i].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// (m + m†)/2; scrubs rounding dust off analytically Hermitian results.
    pub fn hermitized(&self) -> Self {
        let n = self.dim;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                let h = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                out.data[i * n + j] = h;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn to_na(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |r, c| self.data[r * self.dim + c])
    }

    /// Eigendecomposition of a Hermitian matrix: ascending real eigenvalues
    /// and the unitary of column eigenvectors. Input is symmetrized first, so
    /// callers may pass matrices Hermitian only up to rounding.
    pub fn hermitian_eig(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        let na = self.hermitized().to_na();
        let se = nalgebra::SymmetricEigen::try_new(na, 1e-14, 100_000)
            .ok_or(Error::Eigen("symmetric QR did not converge"))?;
        let n = self.dim;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let vals: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
        let mut vecs = ComplexMatrix::zeros(n)?;
        for (col, &k) in order.iter().enumerate() {
            for row in 0..n {
                vecs.data[row * n + col] = se.eigenvectors[(row, k)];
            }
        }
        Ok((vals, vecs))
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

// ── Density matrices ────────────────────────────────────────────────────

/// Hermitian, unit-trace, positive-semidefinite operator.
///
/// `new` verifies all three invariants (the PSD check costs an
/// eigendecomposition). Code paths whose construction guarantees positivity,
/// like LL†/tr factorizations, use [`DensityMatrix::from_psd_construction`]
/// which only re-Hermitizes and normalizes the trace.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
    purity_hint: Option<f64>,
}

impl DensityMatrix {
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
                expected: "1 within 1e-10",
            });
        }
        let min_eig = min_eigenvalue(&mat)?;
        if min_eig < EIG_FLOOR {
            return Err(Error::NotPsd {
                context: "density matrix",
                min_eig,
            });
        }
        Ok(Self {
            mat,
            purity_hint: None,
        })
    }

    /// Wraps a matrix that is PSD by construction: re-Hermitize, normalize
    /// the trace exactly, skip the spectral check.
    pub fn from_psd_construction(mat: ComplexMatrix, purity_hint: Option<f64>) -> Result<Self> {
        if !mat.is_finite() {
            return Err(Error::DegenerateInput("non-finite matrix entry"));
        }
        let h = mat.hermitized();
        let tr = h.trace().re;
        if tr.abs() < 1e-30 {
            return Err(Error::DegenerateTrace { trace: tr });
        }
        Ok(Self {
            mat: h.scale(C64::new(1.0 / tr, 0.0)),
            purity_hint,
        })
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

    /// tr(ρ²) when the constructor knew it; generators of pure states set 1.
    pub fn purity_hint(&self) -> Option<f64> {
        self.purity_hint
    }

    /// tr(a†a ρ) = Σ n ρ[n,n]; the number operator is diagonal so only the
    /// diagonal is read.
    pub fn mean_photon(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.mat[(n, n)].re).sum()
    }
}

// ── Operators ───────────────────────────────────────────────────────────

/// Annihilation operator: a[n−1, n] = √n. The creation operator is its
/// conjugate transpose.
pub fn annihilation_op(dim: usize) -> Result<ComplexMatrix> {
    let mut a = ComplexMatrix::zeros(dim)?;
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(a)
}

/// Number operator a†a = diag(0, 1, …, dim−1).
pub fn number_op(dim: usize) -> Result<ComplexMatrix> {
    ComplexMatrix::from_fn(dim, |i, j| {
        if i == j {
            C64::new(i as f64, 0.0)
        } else {
            CZERO
        }
    })
}

/// Displacement operator D(α) = exp(αa† − α*a).
///
/// The generator K = αa† − α*a is anti-Hermitian, so K = iH with H Hermitian
/// and exp(K) = V e^{iλ} V† from the eigendecomposition H = VλV†. Unitary to
/// rounding; truncation shows up only as leakage near the cutoff.
pub fn displacement_op(alpha: C64, dim: usize) -> Result<ComplexMatrix> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::DegenerateInput("non-finite displacement amplitude"));
    }
    let a = annihilation_op(dim)?;
    let adag = a.dagger();
    let k = adag.scale(alpha).sub(&a.scale(alpha.conj()));
    // H = −iK is Hermitian
    let h = k.scale(C64::new(0.0, -1.0));
    let (vals, vecs) = h.hermitian_eig()?;
    let vdag = vecs.dagger();
    let mut phased = vecs.clone();
    for col in 0..dim {
        let phase = C64::new(0.0, vals[col]).exp();
        for row in 0..dim {
            phased[(row, col)] *= phase;
        }
    }
    Ok(phased.matmul(&vdag))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &ComplexMatrix) -> Result<f64> {
    let (vals, _) = m.hermitian_eig()?;
    Ok(vals[0])
}

/// Eigenvalues below this fraction of the largest one are clipped to zero.
pub const EIG_CLIP_REL: f64 = 1e-9;

/// Hermitian PSD square root via eigendecomposition. Eigenvalues smaller
/// than 1e−9 of the largest are rounding dust and clip to zero; anything
/// below −1e−6 is a genuine PSD violation.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (vals, vecs) = m.hermitian_eig()?;
    if vals[0] < PSD_HARD_FLOOR {
        return Err(Error::NotPsd {
            context: "psd_sqrt",
            min_eig: vals[0],
        });
    }
    let dim = m.dim();
    let clip = EIG_CLIP_REL * vals[dim - 1].max(0.0);
    let mut scaled = vecs.clone();
    for col in 0..dim {
        let lam = if vals[col] < clip { 0.0 } else { vals[col] };
        let root = lam.sqrt();
        for row in 0..dim {
            scaled[(row, col)] *= root;
        }
    }
    Ok(scaled.matmul(&vecs.dagger()).hermitized())
}

/// Uhlmann fidelity F(ρ,σ) = (tr √(√ρ σ √ρ))², clamped into [0, 1].
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let s = psd_sqrt(rho.mat())?;
    let inner = s.matmul(sigma.mat()).matmul(&s);
    let root = psd_sqrt(&inner)?;
    let f = root.trace().re.powi(2);
    Ok(f.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Independent matrix exponential: scaling-and-squaring Taylor series.
    /// Deliberately avoids the spectral path used by displacement_op.
    fn expm_taylor(m: &ComplexMatrix) -> ComplexMatrix {
        let dim = m.dim();
        let squarings = 8u32;
        let scaled = m.scale(c(1.0 / f64::from(2u32.pow(squarings)), 0.0));
        let mut sum = ComplexMatrix::identity(dim).unwrap();
        let mut term = ComplexMatrix::identity(dim).unwrap();
        for k in 1..30 {
            term = term.matmul(&scaled).scale(c(1.0 / k as f64, 0.0));
            sum = sum.add(&term);
            if term.max_abs() < 1e-18 {
                break;
            }
        }
        let mut out = sum;
        for _ in 0..squarings {
            out = out.matmul(&out);
        }
        out
    }

    fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(dim, |_, _| {
            c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
        .unwrap();
        DensityMatrix::from_psd_construction(g.matmul(&g.dagger()), None).unwrap()
    }

    fn coherent_density(alpha: C64, dim: usize) -> DensityMatrix {
        let d = displacement_op(alpha, dim).unwrap();
        let ket: Vec<C64> = (0..dim).map(|i| d[(i, 0)]).collect();
        let mat = ComplexMatrix::from_fn(dim, |i, j| ket[i] * ket[j].conj()).unwrap();
        DensityMatrix::from_psd_construction(mat, Some(1.0)).unwrap()
    }

    #[test]
    fn annihilation_matches_defining_relation() {
        let a = annihilation_op(3).unwrap();
        assert_eq!(a[(0, 1)], c(1.0, 0.0));
        assert!((a[(1, 2)] - c(2f64.sqrt(), 0.0)).norm() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                if j != i + 1 {
                    assert_eq!(a[(i, j)], CZERO);
                }
            }
        }
    }

    #[test]
    fn annihilation_lowers_one_photon() {
        let a = annihilation_op(2).unwrap();
        let one = vec![CZERO, c(1.0, 0.0)];
        let lowered = a.mul_vec(&one);
        assert_eq!(lowered, vec![c(1.0, 0.0), CZERO]);
    }

    #[test]
    fn number_operator_diagonal() {
        let dim = 8;
        let a = annihilation_op(dim).unwrap();
        let n = a.dagger().matmul(&a);
        for i in 0..dim {
            assert!((n[(i, i)] - c(i as f64, 0.0)).norm() < 1e-12);
        }
        assert!(n.sub(&number_op(dim).unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn rejects_dimension_below_two() {
        assert!(matches!(
            annihilation_op(1),
            Err(Error::InvalidDimension(1))
        ));
        assert!(ComplexMatrix::zeros(0).is_err());
    }

    #[test]
    fn displacement_of_zero_is_identity() {
        let d = displacement_op(CZERO, 8).unwrap();
        let eye = ComplexMatrix::identity(8).unwrap();
        assert!(d.sub(&eye).max_abs() < 1e-12);
    }

    #[test]
    fn displacement_column_matches_power_series_oracle() {
        // D(1)|0⟩ at dim=64; compare first 8 amplitudes against the Taylor
        // exponential and against e^{−1/2}/√(n!).
        let dim = 64;
        let alpha = c(1.0, 0.0);
        let d = displacement_op(alpha, dim).unwrap();
        let a = annihilation_op(dim).unwrap();
        let k = a.dagger().scale(alpha).sub(&a.scale(alpha.conj()));
        let oracle = expm_taylor(&k);
        let mut fact = 1.0;
        for n in 0..8 {
            if n > 0 {
                fact *= n as f64;
            }
            let analytic = (-0.5f64).exp() / fact.sqrt();
            assert!(
                (d[(n, 0)] - oracle[(n, 0)]).norm() < 1e-8,
                "n={n}: spectral {} vs series {}",
                d[(n, 0)],
                oracle[(n, 0)]
            );
            assert!((d[(n, 0)].re - analytic).abs() < 1e-8);
            assert!(d[(n, 0)].im.abs() < 1e-10);
        }
    }

    #[test]
    fn displacement_unitarity_leakage_within_budget() {
        for alpha in [c(2.0, 0.0), c(1.2, -1.3), c(0.0, 2.0)] {
            let d = displacement_op(alpha, 32).unwrap();
            let prod = d.matmul(&d.dagger());
            let mut worst = 0.0f64;
            for i in 0..16 {
                for j in 0..16 {
                    let target = if i == j { c(1.0, 0.0) } else { CZERO };
                    worst = worst.max((prod[(i, j)] - target).norm());
                }
            }
            assert!(worst <= 1e-6, "leakage {worst} for α={alpha}");
        }
    }

    #[test]
    fn fidelity_identity_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density(6, &mut rng);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() <= 1e-9);

        let f0 = ComplexMatrix::from_fn(4, |i, j| {
            if i == 0 && j == 0 {
                c(1.0, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        let f1 = ComplexMatrix::from_fn(4, |i, j| {
            if i == 1 && j == 1 {
                c(1.0, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        let r0 = DensityMatrix::new(f0).unwrap();
        let r1 = DensityMatrix::new(f1).unwrap();
        assert!(fidelity(&r0, &r1).unwrap() <= 1e-12);
    }

    #[test]
    fn fidelity_matches_coherent_overlap_oracle() {
        // |⟨α|β⟩|² = exp(−|α−β|²); α=1, β=−1 gives e^{−4}.
        let rho = coherent_density(c(1.0, 0.0), 32);
        let sigma = coherent_density(c(-1.0, 0.0), 32);
        let f = fidelity(&rho, &sigma).unwrap();
        assert!((f - (-4.0f64).exp()).abs() < 1e-6, "F = {f}");
    }

    #[test]
    fn fidelity_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_density(5, &mut rng);
            let b = random_density(5, &mut rng);
            let fab = fidelity(&a, &b).unwrap();
            let fba = fidelity(&b, &a).unwrap();
            assert!((fab - fba).abs() <= 1e-8);
        }
    }

    #[test]
    fn fidelity_reduces_to_overlap_for_pure_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dim = 6;
            let mut psi: Vec<C64> = (0..dim)
                .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut phi: Vec<C64> = (0..dim)
                .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let npsi = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let nphi = phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|z| *z /= npsi);
            phi.iter_mut().for_each(|z| *z /= nphi);
            let overlap: C64 = psi.iter().zip(&phi).map(|(p, q)| p.conj() * q).sum();
            let rp = DensityMatrix::from_psd_construction(
                ComplexMatrix::from_fn(dim, |i, j| psi[i] * psi[j].conj()).unwrap(),
                Some(1.0),
            )
            .unwrap();
            let rq = DensityMatrix::from_psd_construction(
                ComplexMatrix::from_fn(dim, |i, j| phi[i] * phi[j].conj()).unwrap(),
                Some(1.0),
            )
            .unwrap();
            let f = fidelity(&rp, &rq).unwrap();
            assert!((f - overlap.norm_sqr()).abs() <= 1e-8);
        }
    }

    #[test]
    fn displaced_vacuum_matches_analytic_amplitudes() {
        // c_{n+1} = c_n α/√(n+1) starting from c_0 = e^{−|α|²/2}.
        for alpha in [c(0.5, 0.0), c(1.0, -1.0), c(2.0, 0.0)] {
            let dim = 32;
            let rho = coherent_density(alpha, dim);
            let mut ket = vec![CZERO; dim];
            ket[0] = c((-alpha.norm_sqr() / 2.0).exp(), 0.0);
            for n in 0..dim - 1 {
                ket[n + 1] = ket[n] * alpha / c(((n + 1) as f64).sqrt(), 0.0);
            }
            let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            ket.iter_mut().for_each(|z| *z /= norm);
            let sigma = DensityMatrix::from_psd_construction(
                ComplexMatrix::from_fn(dim, |i, j| ket[i] * ket[j].conj()).unwrap(),
                Some(1.0),
            )
            .unwrap();
            assert!(fidelity(&rho, &sigma).unwrap() >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_diagonal_and_roundtrip() {
        let m = ComplexMatrix::from_fn(2, |i, j| {
            if i != j {
                CZERO
            } else if i == 0 {
                c(0.64, 0.0)
            } else {
                c(0.36, 0.0)
            }
        })
        .unwrap();
        let s = psd_sqrt(&m).unwrap();
        assert!((s[(0, 0)].re - 0.8).abs() < 1e-12);
        assert!((s[(1, 1)].re - 0.6).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let rho = random_density(8, &mut rng);
            let s = psd_sqrt(rho.mat()).unwrap();
            let back = s.matmul(&s);
            assert!(back.sub(rho.mat()).max_abs() <= 1e-9);
        }

        let eye = ComplexMatrix::identity(4).unwrap();
        let quarter = eye.scale(c(0.25, 0.0));
        let s = psd_sqrt(&quarter).unwrap();
        assert!(s.sub(&eye.scale(c(0.5, 0.0))).max_abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_genuinely_negative_input() {
        let m = ComplexMatrix::from_fn(2, |i, j| {
            if i == j && i == 1 {
                c(-0.5, 0.0)
            } else if i == j {
                c(1.5, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        assert!(matches!(psd_sqrt(&m), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn trace_deviation_and_min_eigenvalue() {
        let eye = ComplexMatrix::identity(32).unwrap();
        assert!((eye.trace().re - 32.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ComplexMatrix::from_fn(8, |_, _| {
            c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
        .unwrap();
        let ll = g.matmul(&g.dagger());
        assert!(ll.hermitian_deviation() <= 1e-12);

        let m = ComplexMatrix::from_fn(2, |i, j| {
            if i == j && i == 0 {
                c(1.0, 0.0)
            } else if i == j {
                c(-0.5, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        assert!((min_eigenvalue(&m).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_constructor_enforces_invariants() {
        let ok = ComplexMatrix::from_fn(2, |i, j| {
            if i == j {
                c(0.5, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        assert!(DensityMatrix::new(ok).is_ok());

        let bad_trace = ComplexMatrix::identity(2).unwrap();
        assert!(DensityMatrix::new(bad_trace).is_err());

        let non_hermitian = ComplexMatrix::from_fn(2, |i, j| {
            if i == 0 && j == 1 {
                c(0.3, 0.0)
            } else if i == j {
                c(0.5, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        assert!(DensityMatrix::new(non_hermitian).is_err());

        let indefinite = ComplexMatrix::from_fn(2, |i, j| {
            if i == j && i == 0 {
                c(1.5, 0.0)
            } else if i == j {
                c(-0.5, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        assert!(matches!(
            DensityMatrix::new(indefinite),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn mean_photon_of_fock_state() {
        let dim = 16;
        let m = ComplexMatrix::from_fn(dim, |i, j| {
            if i == 5 && j == 5 {
                c(1.0, 0.0)
            } else {
                CZERO
            }
        })
        .unwrap();
        let rho = DensityMatrix::new(m).unwrap();
        assert!((rho.mean_photon() - 5.0).abs() < 1e-12);
    }
}
