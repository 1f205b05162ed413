//! Husimi-Q measurement simulation and the sensing matrix of the inversion
//! problem.
//!
//! The measurement grid is a square lattice of coherent-state projectors
//! |α⟩⟨α|/π; a state's Husimi function sampled there is the data vector d of
//! d = A·vec(ρ). Grid evaluation and sensing-matrix assembly fan out per
//! point through [`crate::par`], so builds with the `parallel` feature use
//! every core while staying bitwise identical to the sequential path.

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, DensityMatrix};
use crate::par;
use crate::states::displaced_vacuum;
use num_complex::Complex64 as C64;

/// Values below this are rounding dust from analytically nonnegative
/// projector expectations; they clip to the floor instead of erroring.
pub const Q_FLOOR: f64 = -1e-12;

/// Square phase-space grid spanning [−extent, extent] on both quadrature
/// axes, endpoints included, row-major with the real part varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGeometry {
    side: usize,
    extent: f64,
}

impl GridGeometry {
    pub fn new(side: usize, extent: f64) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidParameter {
                name: "side",
                value: side as f64,
                expected: "≥ 2",
            });
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::InvalidParameter {
                name: "extent",
                value: extent,
                expected: "> 0",
            });
        }
        Ok(GridGeometry { side, extent })
    }

    /// The paper's working geometry: 32×32 over [−5, 5]².
    pub fn standard() -> Self {
        GridGeometry {
            side: 32,
            extent: 5.0,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lattice spacing 2L/(side−1).
    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.side as f64 - 1.0)
    }

    /// Cell area Δ² for discrete integrals.
    pub fn cell_area(&self) -> f64 {
        self.spacing().powi(2)
    }

    /// Grid point i, row-major with Re varying fastest.
    pub fn point(&self, i: usize) -> C64 {
        let row = i / self.side;
        let col = i % self.side;
        let d = self.spacing();
        C64::new(
            -self.extent + d * col as f64,
            -self.extent + d * row as f64,
        )
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Husimi function values over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HusimiGrid {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl HusimiGrid {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::DimensionMismatch(values.len(), geometry.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < Q_FLOOR) {
            return Err(Error::DegenerateInput("husimi value below floor or non-finite"));
        }
        Ok(HusimiGrid { geometry, values })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Σ Q·Δ², the discrete approximation of ∫Q = 1.
    pub fn discrete_norm(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geometry.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// M×N² map from vectorized density matrices to grid expectation values.
#[derive(Clone, Debug)]
pub struct SensingMatrix {
    geometry: GridGeometry,
    dim: usize,
    /// Row-major M×dim² entries; row i is vec(|α_i⟩⟨α_i|)†/π.
    entries: Vec<C64>,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.geometry.len()
    }

    pub fn cols(&self) -> usize {
        self.dim * self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn row(&self, i: usize) -> &[C64] {
        let w = self.cols();
        &self.entries[i * w..(i + 1) * w]
    }

    /// A·x for a vectorized (row-major) dim×dim matrix.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch(x.len(), self.cols()));
        }
        let out = par::map_indexed(self.rows(), |i| {
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in self.row(i).iter().zip(x) {
                acc += a * b;
            }
            acc
        });
        for (i, v) in out.iter().enumerate() {
            if v.im.abs() > 1e-10 {
                return Err(Error::Inconsistency(format!(
                    "imaginary residue {} at sensing row {i}",
                    v.im
                )));
            }
        }
        Ok(out.into_iter().map(|v| v.re).collect())
    }
}

/// Precomputed coherent kets for every grid point. Building one costs an
/// eigendecomposition per point; callers evaluating many states on one
/// geometry share a single table.
#[derive(Clone, Debug)]
pub struct GridKets {
    geometry: GridGeometry,
    dim: usize,
    kets: Vec<Vec<C64>>,
}

impl GridKets {
    pub fn new(geom: &GridGeometry, dim: usize) -> Result<Self> {
        let pts = geom.points();
        let kets: Result<Vec<_>> = par::map_indexed(pts.len(), |i| displaced_vacuum(pts[i], dim))
            .into_iter()
            .collect();
        Ok(GridKets {
            geometry: geom.clone(),
            dim,
            kets: kets?,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ket(&self, i: usize) -> &[C64] {
        &self.kets[i]
    }

    /// Q over the grid; the summation order here defines the crate's
    /// canonical husimi evaluation, shared by every caller so repeated runs
    /// are bitwise identical.
    pub fn evaluate(&self, rho: &DensityMatrix) -> Result<HusimiGrid> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch(rho.dim(), self.dim));
        }
        let values = par::map_indexed(self.kets.len(), |i| {
            let ket = &self.kets[i];
            let acted = rho.mat().mul_vec(ket);
            let q: C64 = ket.iter().zip(&acted).map(|(k, a)| k.conj() * a).sum();
            (q.re / std::f64::consts::PI).max(Q_FLOOR)
        });
        HusimiGrid::new(self.geometry.clone(), values)
    }
}

/// Q(α_i) = ⟨α_i|ρ|α_i⟩/π over the grid, clipped at the dust floor.
pub fn husimi_q(rho: &DensityMatrix, geom: &GridGeometry) -> Result<HusimiGrid> {
    GridKets::new(geom, rho.dim())?.evaluate(rho)
}

/// Sequential twin of [`husimi_q`] for benchmark comparison.
pub fn husimi_q_seq(rho: &DensityMatrix, geom: &GridGeometry) -> Result<HusimiGrid> {
    let dim = rho.dim();
    let pts = geom.points();
    let values = par::map_indexed_seq(pts.len(), |i| {
        let ket = displaced_vacuum(pts[i], dim).expect("grid ket");
        let acted = rho.mat().mul_vec(&ket);
        let q: C64 = ket.iter().zip(&acted).map(|(k, a)| k.conj() * a).sum();
        (q.re / std::f64::consts::PI).max(Q_FLOOR)
    });
    HusimiGrid::new(geom.clone(), values)
}

/// Builds A with row i = vec(|α_i⟩⟨α_i|)†/π so that A·vec(ρ) reproduces
/// husimi_q(ρ): ⟨α|ρ|α⟩ = Σ_{mn} conj(c_m) c_n ρ[m,n].
pub fn sensing_matrix(geom: &GridGeometry, dim: usize) -> Result<SensingMatrix> {
    let kets = GridKets::new(geom, dim)?;
    let entries_per_row = dim * dim;
    let entries = par::map_chunked(
        geom.len(),
        8,
        |range| {
            let mut block = Vec::with_capacity(range.len() * entries_per_row);
            for i in range {
                let ket = kets.ket(i);
                for m in 0..dim {
                    let cm = ket[m].conj() / std::f64::consts::PI;
                    for n in 0..dim {
                        block.push(cm * ket[n]);
                    }
                }
            }
            block
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    )
    .unwrap_or_default();
    Ok(SensingMatrix {
        geometry: geom.clone(),
        dim,
        entries,
    })
}

/// Sequential twin of [`sensing_matrix`] for benchmark comparison.
pub fn sensing_matrix_seq(geom: &GridGeometry, dim: usize) -> Result<SensingMatrix> {
    let pts = geom.points();
    let mut entries = Vec::with_capacity(pts.len() * dim * dim);
    for p in pts {
        let ket = displaced_vacuum(p, dim)?;
        for m in 0..dim {
            let cm = ket[m].conj() / std::f64::consts::PI;
            for n in 0..dim {
                entries.push(cm * ket[n]);
            }
        }
    }
    Ok(SensingMatrix {
        geometry: geom.clone(),
        dim,
        entries,
    })
}

/// tr(O_i ρ) for Hermitian observables; the imaginary residue is asserted
/// small and discarded.
pub fn expectation(ops: &[ComplexMatrix], rho: &DensityMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        if op.dim() != rho.dim() {
            return Err(Error::DimensionMismatch(op.dim(), rho.dim()));
        }
        let dev = op.hermitian_deviation();
        if dev > 1e-9 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let t = op.matmul(rho.mat()).trace();
        if t.im.abs() > 1e-9 {
            return Err(Error::Inconsistency(format!(
                "expectation imaginary residue {}",
                t.im
            )));
        }
        out.push(t.re);
    }
    Ok(out)
}

/// Scales a grid so its peak value is 1; network input conditioning only,
/// inversion paths consume raw Q values.
pub fn normalize_for_net(grid: &HusimiGrid) -> Result<HusimiGrid> {
    let peak = grid.max_value();
    if peak <= 0.0 {
        return Err(Error::DegenerateInput("all-zero husimi grid"));
    }
    let values = grid.values().iter().map(|v| (v / peak).max(Q_FLOOR)).collect();
    HusimiGrid::new(grid.geometry().clone(), values)
}
